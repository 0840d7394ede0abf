"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Model configuration is inconsistent with the data or a checkpoint."""


class LabelError(ValueError):
    """A segmentation mask holds a class id outside the configured range."""


class DataError(ValueError):
    """Input records (signals, frames, manifests) violate their contract."""


class TrainingError(RuntimeError):
    """Optimisation produced a non-finite objective.

    The offending loss terms are kept on ``diagnostics`` for inspection.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})

from .distributions import (GaussianParams, LatentScale, clamp_log_variance,
                            kl_diag_gaussian, sample_latent)
from .estimator import HierarchicalCVAESegmenter
from .network import HierarchicalCore, HierarchicalProbUNet

__all__ = [
    "GaussianParams",
    "LatentScale",
    "HierarchicalCore",
    "HierarchicalProbUNet",
    "HierarchicalCVAESegmenter",
    "clamp_log_variance",
    "kl_diag_gaussian",
    "sample_latent",
]

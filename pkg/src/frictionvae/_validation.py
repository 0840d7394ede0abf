"""Input validation helpers shared by the estimators."""
import numpy as np

from .exceptions import ConfigurationError, LabelError


def check_images(X, *, allow_single=False, multiple=None, channels=None):
    """Validate an image batch and return it as float array (n, H, W, C).

    A single (H, W, C) image is promoted to a batch of one when
    ``allow_single`` is set. Pixel values must lie in [0, 1].
    """
    X = np.asarray(X)
    if X.ndim == 3 and allow_single:
        X = X[None]
    if X.ndim != 4:
        raise ValueError(f"expected images of shape (n, H, W, C), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    if not np.issubdtype(X.dtype, np.floating):
        X = X.astype(np.float64)
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError("pixel values must lie in [0, 1]")
    if channels is not None and X.shape[-1] != channels:
        raise ConfigurationError(
            f"model expects {channels} channels, images have {X.shape[-1]}")
    if multiple is not None:
        h, w = X.shape[1:3]
        if h % multiple or w % multiple or h < 8 or w < 8:
            raise ConfigurationError(
                f"image size {h}x{w} must be >= 8 and divisible by {multiple}")
    return X


def check_masks(y, n_classes, *, ignore_index=None, allow_single=False):
    """Validate segmentation masks and return integer grids (n, H, W).

    One-hot masks (n, H, W, C') are accepted and converted; each pixel row
    must sum to exactly one.
    """
    y = np.asarray(y)
    if allow_single and y.ndim == 2:
        y = y[None]
    if y.ndim == 4:
        if y.shape[-1] != n_classes:
            raise LabelError(f"one-hot masks need {n_classes} channels, got {y.shape[-1]}")
        if not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=-1) == 1):
            raise LabelError("one-hot masks must contain exactly one 1 per pixel")
        return y.argmax(axis=-1).astype(np.int64)
    if y.ndim != 3:
        raise ValueError(f"expected masks of shape (n, H, W), got {y.shape}")
    if np.issubdtype(y.dtype, np.floating):
        if not np.all(np.mod(y, 1) == 0):
            raise LabelError("mask values must be integral class ids")
    y = y.astype(np.int64)
    valid = y if ignore_index is None else y[y != ignore_index]
    if valid.size and (valid.min() < 0 or valid.max() >= n_classes):
        raise LabelError(
            f"mask class ids must lie in [0, {n_classes}); found "
            f"[{valid.min()}, {valid.max()}]")
    return y


def check_consistent_length(*arrays):
    lengths = {len(a) for a in arrays if a is not None}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent sample counts: {sorted(lengths)}")

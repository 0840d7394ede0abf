"""Friction regression from the latent space of a frozen segmentation backbone."""
import logging
from typing import NamedTuple, Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._layers import make_activation
from ._training import predict_batched, seeded, train_regressor
from ._validation import check_consistent_length, check_images
from .checkpoint import (load_checkpoint, load_state, parameter_checksum, restore_params,
                         save_checkpoint, state_to_arrays)
from .cvae.estimator import HierarchicalCVAESegmenter
from .exceptions import ConfigurationError
from .metrics import rmse  # noqa: F401  re-exported for convenience

logger = logging.getLogger(__name__)

KIND = "friction_latent"


class FrictionEstimate(NamedTuple):
    mu: np.ndarray
    spread: Optional[np.ndarray] = None


def surface_onehot(mask, surface_class_ids):
    """One-hot of the most frequent surface class in ``mask``.

    Only pixels whose class is in ``surface_class_ids`` are counted; the
    vector is indexed by position in ``surface_class_ids`` and is all-zero
    when no such pixel exists. Ties go to the earlier id.
    """
    ids = list(surface_class_ids)
    if not ids:
        raise ValueError("surface_class_ids must not be empty")
    counts = np.bincount(np.asarray(mask).ravel().clip(min=0), minlength=max(ids) + 1)
    counts = counts[ids]
    out = np.zeros(len(ids))
    if counts.max() > 0:
        out[np.argmax(counts)] = 1.0
    return out


def surface_onehots(masks, surface_class_ids):
    return np.stack([surface_onehot(m, surface_class_ids) for m in masks])


def extract_latent_feature(X, backbone, seed=0, n_samples=1, scales=None):
    """Pooled prior latents of a fitted backbone, averaged over ``n_samples`` draws.

    The backbone is only evaluated, never updated.
    """
    if not isinstance(backbone, HierarchicalCVAESegmenter):
        raise ConfigurationError("backbone must be a HierarchicalCVAESegmenter")
    check_is_fitted(backbone, "module_")
    return backbone.latent_features(X, n_samples, random_state=seed, scales=scales).mean(axis=0)


class FrictionHead(torch.nn.Module):
    """Latent vector -> two hidden layers -> concat surface one-hot -> hidden -> sigmoid."""

    def __init__(self, n_latent, n_surface, hidden_width=32, activation="relu"):
        super().__init__()
        self.n_latent = n_latent
        self.n_surface = n_surface
        self.pre = torch.nn.Sequential(
            torch.nn.Linear(n_latent, hidden_width), make_activation(activation),
            torch.nn.Linear(hidden_width, hidden_width), make_activation(activation))
        self.post = torch.nn.Sequential(
            torch.nn.Linear(hidden_width + n_surface, hidden_width), make_activation(activation),
            torch.nn.Linear(hidden_width, 1))

    def forward(self, z, s):
        if z.shape[-1] != self.n_latent or s.shape[-1] != self.n_surface:
            raise ValueError(
                f"expected latent length {self.n_latent} and surface length "
                f"{self.n_surface}, got {z.shape[-1]} and {s.shape[-1]}")
        h = torch.cat([self.pre(z), s], dim=-1)
        return torch.sigmoid(self.post(h)).squeeze(-1)


def _check_targets(y):
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty target vector")
    if not np.all(np.isfinite(y)) or y.min() < 0 or y.max() > 1:
        raise ValueError("friction targets must lie in [0, 1]")
    return y


class LatentFrictionRegressor(RegressorMixin, BaseEstimator):
    """Friction regressor on top of a frozen :class:`HierarchicalCVAESegmenter`.

    Every image is described by its pooled prior latents and by a one-hot
    of the dominant surface class in the backbone's predicted mask. Only
    the head is trained; the backbone must already be fitted and is left
    untouched (verified by checksum).

    Parameters
    ----------
    backbone : HierarchicalCVAESegmenter
        Fitted segmentation model.
    surface_classes : sequence of int, optional
        Classes counted for the surface one-hot; all classes by default.
    latent_scales : sequence of int, optional
        Latent scales pooled into the feature; all by default.
    n_latent_samples : int
        Prior draws averaged per image. With more than one, ``predict_estimate``
        also reports the spread of the per-draw predictions.
    """

    def __init__(self, backbone=None, surface_classes=None, latent_scales=None,
                 hidden_width=32, activation="relu", learning_rate=1e-3, batch_size=32,
                 max_epochs=35, n_latent_samples=1, random_state=0, verbose=0):
        self.backbone = backbone
        self.surface_classes = surface_classes
        self.latent_scales = latent_scales
        self.hidden_width = hidden_width
        self.activation = activation
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.n_latent_samples = n_latent_samples
        self.random_state = random_state
        self.verbose = verbose

    def _surface_ids(self):
        if self.surface_classes is None:
            return list(range(self.backbone.n_classes))
        return list(self.surface_classes)

    def _check_backbone(self):
        if not isinstance(self.backbone, HierarchicalCVAESegmenter):
            raise ConfigurationError("a fitted HierarchicalCVAESegmenter backbone is required")
        check_is_fitted(self.backbone, "module_")

    def features(self, X):
        """Per-draw latent features (K, n, F) and surface one-hots (n, n_s)."""
        self._check_backbone()
        X = check_images(X, allow_single=True)
        z = self.backbone.latent_features(X, self.n_latent_samples,
                                          random_state=self.random_state,
                                          scales=self.latent_scales)
        masks = self.backbone.predict(X, random_state=self.random_state)
        return z, surface_onehots(masks, self._surface_ids())

    def fit(self, X, y, X_val=None, y_val=None):
        """Train the head on images ``X`` with friction labels ``y`` in [0, 1]."""
        self._check_backbone()
        y = _check_targets(y)
        check_consistent_length(X, y)
        checksum = parameter_checksum(self.backbone.module_)
        z, s = self.features(X)
        self.n_latent_, self.n_surface_ = z.shape[-1], s.shape[-1]
        with seeded(self.random_state):
            self.head_ = FrictionHead(self.n_latent_, self.n_surface_, self.hidden_width,
                                      self.activation)
        val = None
        if X_val is not None:
            y_val = _check_targets(y_val)
            check_consistent_length(X_val, y_val)
            zv, sv = self.features(X_val)
            val = (self._tensors(zv.mean(0), sv), torch.as_tensor(y_val, dtype=torch.float32))
        log = (lambda row: logger.info("epoch %(epoch)d  %(train_rmse).5f", row)) if self.verbose else None
        self.history_ = train_regressor(
            self.head_, self.head_.parameters(), self._tensors(z.mean(0), s),
            torch.as_tensor(y, dtype=torch.float32), val,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            epochs=self.max_epochs,
            generator=torch.Generator().manual_seed(self.random_state), log=log)
        if parameter_checksum(self.backbone.module_) != checksum:
            raise RuntimeError("backbone parameters changed while training the friction head")
        self.backbone_checksum_ = checksum
        return self

    @staticmethod
    def _tensors(z, s):
        return (torch.as_tensor(z, dtype=torch.float32), torch.as_tensor(s, dtype=torch.float32))

    def regress(self, z, s):
        """Friction from precomputed latent features and surface one-hots."""
        check_is_fitted(self, "head_")
        z = np.atleast_2d(z)
        s = np.atleast_2d(s)
        return predict_batched(self.head_, self._tensors(z, s)).numpy().astype(float)

    def predict_estimate(self, X):
        check_is_fitted(self, "head_")
        z, s = self.features(X)
        mu = self.regress(z.mean(0), s)
        spread = None
        if len(z) > 1:
            spread = np.stack([self.regress(zk, s) for zk in z]).std(axis=0)
        return FrictionEstimate(mu, spread)

    def predict(self, X):
        return self.predict_estimate(X).mu

    def save(self, path):
        check_is_fitted(self, "head_")
        arrays = state_to_arrays(self.head_, "head.")
        arrays.update(state_to_arrays(self.backbone.module_, "backbone."))
        config = {k: v for k, v in self.get_params(deep=False).items() if k != "backbone"}
        save_checkpoint(path, KIND, config, arrays, extra={
            "backbone_config": self.backbone.get_params(),
            "backbone_in_channels": self.backbone.in_channels_,
            "n_latent": self.n_latent_,
            "n_surface": self.n_surface_,
            "backbone_checksum": self.backbone_checksum_,
        })

    @classmethod
    def load(cls, path):
        meta, arrays = load_checkpoint(path, KIND)
        extra = meta["extra"]
        backbone = HierarchicalCVAESegmenter.from_checkpoint(
            {"config": extra["backbone_config"],
             "extra": {"in_channels": extra["backbone_in_channels"]}},
            arrays, prefix="backbone.", source=str(path))
        params = restore_params(meta["config"], ("surface_classes", "latent_scales"))
        est = cls(backbone=backbone, **params)
        est.n_latent_, est.n_surface_ = int(extra["n_latent"]), int(extra["n_surface"])
        est.head_ = FrictionHead(est.n_latent_, est.n_surface_, est.hidden_width, est.activation)
        load_state(est.head_, arrays, "head.", str(path))
        est.backbone_checksum_ = extra["backbone_checksum"]
        if parameter_checksum(backbone.module_) != est.backbone_checksum_:
            raise ConfigurationError(f"{path}: backbone parameters do not match their checksum")
        return est

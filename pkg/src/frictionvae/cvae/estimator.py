"""scikit-learn style wrapper around :class:`HierarchicalProbUNet`."""
import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._layers import to_nchw
from .._training import minibatches, seeded
from .._validation import check_images, check_masks
from ..augmentation import augment_dataset
from ..checkpoint import (load_checkpoint, load_state, restore_params, save_checkpoint,
                          state_to_arrays)
from ..exceptions import ConfigurationError
from ..metrics import mean_iou
from .network import HierarchicalProbUNet

logger = logging.getLogger(__name__)

KIND = "cvae_segmenter"


class HierarchicalCVAESegmenter(TransformerMixin, BaseEstimator):
    """Probabilistic semantic segmenter with a hierarchy of Gaussian latents.

    ``fit`` minimises the negative conditional ELBO. ``predict_proba``
    averages the decoder output over ``n_samples`` prior draws, and
    ``transform`` returns pooled prior latents for downstream regressors.

    Parameters
    ----------
    n_classes : int
        Number of segmentation classes.
    levels : int
        Down-sampling levels of the U-Net; inputs must be divisible by
        ``2 ** levels``.
    res_blocks : int
        Residual blocks per level.
    latent_channels : tuple of int
        Channels of each latent scale, coarsest first. Its length is the
        number of latent scales and may not exceed ``levels``.
    base_width, max_width : int
        Feature width at full resolution; it doubles per level up to
        ``max_width``.
    beta : float
        Weight of the KL term.
    learning_rate, batch_size, max_iter :
        Adam step size, minibatch size and number of optimiser steps.
        ``max_iter=0`` builds an untrained model.
    n_samples : int
        Prior draws averaged by ``predict_proba``.
    ignore_index : int
        Mask value excluded from the loss and metrics.
    augment : bool
        Train on five augmented patches per image instead of full images.
    dtype : {"float32", "float64"}
    random_state : int
        Seeds initialisation, minibatch order and latent noise.
    verbose : int
        Log every ``verbose`` steps; 0 disables.
    """

    def __init__(self, n_classes=6, levels=3, res_blocks=2, latent_channels=(4, 4, 4),
                 base_width=8, max_width=64, activation="relu", beta=1.0,
                 learning_rate=1e-4, batch_size=8, max_iter=1300, n_samples=16,
                 ignore_index=255, augment=False, dtype="float32", random_state=0,
                 verbose=0):
        self.n_classes = n_classes
        self.levels = levels
        self.res_blocks = res_blocks
        self.latent_channels = latent_channels
        self.base_width = base_width
        self.max_width = max_width
        self.activation = activation
        self.beta = beta
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.n_samples = n_samples
        self.ignore_index = ignore_index
        self.augment = augment
        self.dtype = dtype
        self.random_state = random_state
        self.verbose = verbose

    @property
    def _torch_dtype(self):
        try:
            return {"float32": torch.float32, "float64": torch.float64}[self.dtype]
        except KeyError:
            raise ConfigurationError(f"dtype must be 'float32' or 'float64', not {self.dtype!r}") from None

    def _build(self, in_channels):
        with seeded(self.random_state):
            module = HierarchicalProbUNet(
                in_channels=in_channels, n_classes=self.n_classes, levels=self.levels,
                res_blocks=self.res_blocks, latent_channels=tuple(self.latent_channels),
                base_width=self.base_width, max_width=self.max_width,
                activation=self.activation)
        return module.to(self._torch_dtype)

    def fit(self, X, y):
        """Train on images ``X`` (n, H, W, C) in [0, 1] and masks ``y`` (n, H, W)."""
        X = check_images(X, multiple=2 ** self.levels)
        y = check_masks(y, self.n_classes, ignore_index=self.ignore_index)
        if y.shape != X.shape[:3]:
            raise ValueError(f"masks {y.shape} do not match images {X.shape[:3]}")
        if self.augment:
            X, y = augment_dataset(X, y, seed=self.random_state, multiple=2 ** self.levels)
            X = check_images(X, multiple=2 ** self.levels)
        self.in_channels_ = X.shape[-1]
        self.module_ = self._build(self.in_channels_)
        self.history_ = []
        self._train(to_nchw(X, self._torch_dtype), torch.as_tensor(y))
        return self

    def _train(self, X, y):
        module = self.module_
        generator = torch.Generator().manual_seed(self.random_state)
        optimizer = torch.optim.Adam(module.parameters(), lr=self.learning_rate)
        batches = minibatches(len(X), self.batch_size, generator)
        module.train()
        for it in range(1, self.max_iter + 1):
            idx = next(batches)
            loss, diag = module.elbo_loss(X[idx], y[idx], beta=self.beta,
                                          generator=generator,
                                          ignore_index=self.ignore_index)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            row = {"iteration": it, "total_loss": loss.item(), "recon": diag["recon"].item()}
            row.update({f"kl_scale_{i + 1}": k.item() for i, k in enumerate(diag["kl"])})
            self.history_.append(row)
            if self.verbose and it % self.verbose == 0:
                logger.info("step %d  loss %.4f  recon %.4f  kl %s", it, row["total_loss"],
                            row["recon"], " ".join(f"{k.item():.4f}" for k in diag["kl"]))
        module.eval()
        self.n_iter_ = self.max_iter

    def _check_X(self, X):
        check_is_fitted(self, "module_")
        return check_images(X, allow_single=True, multiple=2 ** self.levels,
                            channels=self.in_channels_)

    def _chunks(self, X, chunk):
        Xt = to_nchw(X, self._torch_dtype)
        for start in range(0, len(Xt), chunk):
            yield start, Xt[start:start + chunk]

    def predict_proba(self, X, n_samples=None, random_state=None, noise=None,
                      return_uncertainty=False, chunk_size=32):
        """Class probabilities (n, H, W, C') averaged over prior samples.

        ``noise`` optionally replays fixed draws: a list with one entry per
        sample, each a list of per-scale tensors of batch size n. With
        ``return_uncertainty`` the per-pixel variance of the class
        probabilities across samples (summed over classes) is returned too.
        """
        X = self._check_X(X)
        n_samples = self.n_samples if n_samples is None else n_samples
        if noise is not None:
            n_samples = len(noise)
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        seed = self.random_state if random_state is None else random_state
        generator = torch.Generator().manual_seed(seed)
        module = self.module_
        H, W = X.shape[1:3]
        probs, uncertainty = [], []
        with torch.no_grad():
            for start, xb in self._chunks(X, chunk_size):
                if noise is None:
                    batch_noise = [module.draw_noise(len(xb), H, W, generator, xb.dtype)
                                   for _ in range(n_samples)]
                else:
                    batch_noise = [[n[start:start + len(xb)].to(xb.dtype) for n in draw]
                                   for draw in noise]
                mean, unc = module.predict(xb, noise=batch_noise)
                probs.append(mean.permute(0, 2, 3, 1).numpy())
                uncertainty.append(unc.numpy())
        probs = np.concatenate(probs)
        if return_uncertainty:
            return probs, np.concatenate(uncertainty)
        return probs

    def predict(self, X, n_samples=None, random_state=None):
        """Most probable class per pixel of the sample-averaged distribution."""
        return self.predict_proba(X, n_samples, random_state).argmax(axis=-1)

    def sample_masks(self, X, n_samples=16, random_state=None, chunk_size=32):
        """Argmax masks of individual prior samples, shape (n_samples, n, H, W)."""
        X = self._check_X(X)
        seed = self.random_state if random_state is None else random_state
        generator = torch.Generator().manual_seed(seed)
        out = []
        with torch.no_grad():
            for _, xb in self._chunks(X, chunk_size):
                out.append(np.stack([
                    self.module_.sample(xb, generator=generator)[0].argmax(dim=1).numpy()
                    for _ in range(n_samples)]))
        return np.concatenate(out, axis=1)

    def latent_features(self, X, n_samples=1, random_state=None, scales=None, chunk_size=32):
        """Pooled prior latents, shape (n_samples, n, n_features).

        Every prior draw is spatially averaged per scale and the selected
        scales (default all) are concatenated coarsest first.
        """
        X = self._check_X(X)
        scales = range(self.module_.n_scales) if scales is None else list(scales)
        if not scales or any(not 0 <= s < self.module_.n_scales for s in scales):
            raise ConfigurationError(
                f"latent scales {list(scales)} not available in a "
                f"{self.module_.n_scales}-scale backbone")
        seed = self.random_state if random_state is None else random_state
        generator = torch.Generator().manual_seed(seed)
        H, W = X.shape[1:3]
        out = []
        with torch.no_grad():
            for _, xb in self._chunks(X, chunk_size):
                draws = []
                for _ in range(n_samples):
                    noise = self.module_.draw_noise(len(xb), H, W, generator, xb.dtype)
                    latent, _ = self.module_.prior(xb, noise=noise)
                    draws.append(torch.cat([latent[s].z.mean(dim=(2, 3)) for s in scales], 1))
                out.append(torch.stack(draws).numpy())
        return np.concatenate(out, axis=1)

    def transform(self, X):
        """Single-draw pooled latent feature vector per image."""
        return self.latent_features(X, n_samples=1)[0]

    def score(self, X, y):
        """Mean IoU of ``predict(X)`` against ``y`` over the whole set."""
        y = check_masks(y, self.n_classes, ignore_index=self.ignore_index, allow_single=True)
        return mean_iou(self.predict(X), y, self.n_classes, self.ignore_index)[1]

    @property
    def n_features_out_(self):
        return int(sum(self.latent_channels))

    def save(self, path):
        check_is_fitted(self, "module_")
        save_checkpoint(path, KIND, self.get_params(), state_to_arrays(self.module_),
                        extra={"in_channels": self.in_channels_})

    @classmethod
    def load(cls, path):
        meta, arrays = load_checkpoint(path, KIND)
        return cls.from_checkpoint(meta, arrays, source=str(path))

    @classmethod
    def from_checkpoint(cls, meta, arrays, prefix="", source="checkpoint"):
        est = cls(**restore_params(meta["config"], ("latent_channels",)))
        est.in_channels_ = int(meta["extra"]["in_channels"])
        est.module_ = est._build(est.in_channels_)
        load_state(est.module_, arrays, prefix, source)
        est.module_.eval()
        return est

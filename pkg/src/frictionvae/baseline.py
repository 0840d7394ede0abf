"""Discriminative end-to-end friction estimator (U-Net without latents)."""
import logging

import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn
from torch.nn import functional as F

from ._layers import Encoder, level_widths, make_activation, res_stack, to_nchw, upsample
from ._training import predict_batched, seeded, train_regressor
from ._validation import check_consistent_length, check_images
from .checkpoint import load_checkpoint, load_state, restore_params, save_checkpoint, state_to_arrays
from .exceptions import ConfigurationError
from .friction import FrictionEstimate, _check_targets

logger = logging.getLogger(__name__)

KIND = "end2end"


class EndToEndUNet(nn.Module):
    """Residual U-Net whose full-resolution features are flattened into three affine layers."""

    latent_scales = 0

    def __init__(self, in_channels=3, input_size=64, levels=3, res_blocks=2, base_width=8,
                 max_width=64, affine_widths=(256, 64, 1), activation="relu"):
        super().__init__()
        affine_widths = tuple(affine_widths)
        if len(affine_widths) != 3 or affine_widths[-1] != 1 or min(affine_widths) < 1:
            raise ConfigurationError("affine_widths must be three positive widths ending in 1")
        if input_size % 2 ** levels:
            raise ConfigurationError(f"input_size {input_size} not divisible by {2 ** levels}")
        widths = level_widths(base_width, levels, max_width)
        self.in_channels = in_channels
        self.input_size = input_size
        self.levels = levels
        self.encoder = Encoder(in_channels, widths, res_blocks, activation)
        self.decoder = nn.ModuleList(
            res_stack(widths[levels - j] + widths[levels - 1 - j], widths[levels - 1 - j],
                      res_blocks, activation)
            for j in range(levels))
        layers, prev = [], widths[0] * input_size * input_size
        for i, width in enumerate(affine_widths):
            layers.append(nn.Linear(prev, width))
            if i < len(affine_widths) - 1:
                layers.append(make_activation(activation))
            prev = width
        self.head = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[1:] != (self.in_channels, self.input_size, self.input_size):
            raise ConfigurationError(
                f"expected input (B, {self.in_channels}, {self.input_size}, "
                f"{self.input_size}), got {tuple(x.shape)}")
        feats = self.encoder(x)
        h = feats[-1]
        for j, block in enumerate(self.decoder):
            h = block(torch.cat([upsample(h), feats[self.levels - 1 - j]], dim=1))
        return torch.sigmoid(self.head(h.flatten(1))).squeeze(-1)


def _n_params(module):
    return int(sum(p.numel() for p in module.parameters()))


class EndToEndFrictionRegressor(RegressorMixin, BaseEstimator):
    """Baseline: regress friction straight from pixels, trained with an RMSE loss.

    Images are resized to ``input_size`` x ``input_size`` before the
    network; the flattened feature map grows with that size.
    """

    def __init__(self, input_size=64, levels=3, res_blocks=2, base_width=8, max_width=64,
                 affine_widths=(256, 64, 1), activation="relu", learning_rate=1e-4,
                 batch_size=8, max_epochs=35, dtype="float32", random_state=0, verbose=0):
        self.input_size = input_size
        self.levels = levels
        self.res_blocks = res_blocks
        self.base_width = base_width
        self.max_width = max_width
        self.affine_widths = affine_widths
        self.activation = activation
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
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
            module = EndToEndUNet(in_channels, self.input_size, self.levels, self.res_blocks,
                                  self.base_width, self.max_width, self.affine_widths,
                                  self.activation)
        return module.to(self._torch_dtype)

    def _prepare(self, X):
        x = to_nchw(X, self._torch_dtype)
        if x.shape[-2:] != (self.input_size, self.input_size):
            x = F.interpolate(x, size=(self.input_size, self.input_size), mode="bilinear",
                              align_corners=False, antialias=True).clamp(0, 1)
        return x

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_images(X)
        y = _check_targets(y)
        check_consistent_length(X, y)
        self.in_channels_ = X.shape[-1]
        self.module_ = self._build(self.in_channels_)
        val = None
        if X_val is not None:
            X_val = check_images(X_val, channels=self.in_channels_)
            y_val = _check_targets(y_val)
            check_consistent_length(X_val, y_val)
            val = ((self._prepare(X_val),), torch.as_tensor(y_val, dtype=self._torch_dtype))
        log = (lambda row: logger.info("epoch %(epoch)d  %(train_rmse).5f", row)) if self.verbose else None
        self.history_ = train_regressor(
            self.module_, self.module_.parameters(), (self._prepare(X),),
            torch.as_tensor(y, dtype=self._torch_dtype), val,
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            epochs=self.max_epochs,
            generator=torch.Generator().manual_seed(self.random_state), log=log)
        return self

    def predict_estimate(self, X):
        check_is_fitted(self, "module_")
        X = check_images(X, allow_single=True, channels=self.in_channels_)
        mu = predict_batched(self.module_, (self._prepare(X),)).numpy().astype(float)
        return FrictionEstimate(mu)

    def predict(self, X):
        return self.predict_estimate(X).mu

    def parameter_report(self):
        """Parameter counts per block; ``latent_scales`` and ``gaussian_heads`` are always 0."""
        check_is_fitted(self, "module_")
        m = self.module_
        report = {name: _n_params(getattr(m, name)) for name in ("encoder", "decoder", "head")}
        report["total"] = _n_params(m)
        report["latent_scales"] = m.latent_scales
        report["gaussian_heads"] = m.latent_scales
        return report

    def save(self, path):
        check_is_fitted(self, "module_")
        save_checkpoint(path, KIND, self.get_params(), state_to_arrays(self.module_),
                        extra={"in_channels": self.in_channels_})

    @classmethod
    def load(cls, path):
        meta, arrays = load_checkpoint(path, KIND)
        est = cls(**restore_params(meta["config"], ("affine_widths",)))
        est.in_channels_ = int(meta["extra"]["in_channels"])
        est.module_ = est._build(est.in_channels_)
        load_state(est.module_, arrays, source=str(path))
        return est


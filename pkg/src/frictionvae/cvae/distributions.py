"""Diagonal Gaussian latents: parameters, reparameterised sampling and KL."""
from dataclasses import dataclass
from typing import NamedTuple

import torch

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass
class GaussianParams:
    """Mean and log-variance of a diagonal Gaussian, laid out (B, C, H, W)."""

    mean: torch.Tensor
    log_variance: torch.Tensor

    def __post_init__(self):
        if self.mean.shape != self.log_variance.shape:
            raise ValueError(
                f"mean {tuple(self.mean.shape)} and log_variance "
                f"{tuple(self.log_variance.shape)} differ in shape")

    @classmethod
    def from_head(cls, out):
        """Split a head output of 2*C channels into clamped parameters."""
        mean, log_variance = torch.chunk(out, 2, dim=1)
        return cls(mean, clamp_log_variance(log_variance))

    @property
    def std(self):
        return torch.exp(0.5 * self.log_variance)


class LatentScale(NamedTuple):
    params: GaussianParams
    z: torch.Tensor


def clamp_log_variance(log_variance):
    return torch.clamp(log_variance, LOGVAR_MIN, LOGVAR_MAX)


def sample_latent(params, noise=None, generator=None):
    """Reparameterised draw ``mean + exp(log_variance / 2) * noise``.

    ``noise`` defaults to a standard normal draw from ``generator``.
    Gradients flow to both parameter tensors.
    """
    if noise is None:
        noise = torch.randn(params.mean.shape, generator=generator,
                            dtype=params.mean.dtype, device=params.mean.device)
    elif noise.shape != params.mean.shape:
        raise ValueError(
            f"noise shape {tuple(noise.shape)} does not match "
            f"{tuple(params.mean.shape)}")
    return params.mean + params.std * noise


def kl_diag_gaussian(q, p):
    """Elementwise KL(q || p) between diagonal Gaussians, in closed form."""
    diff = q.log_variance - p.log_variance
    mean_term = (q.mean - p.mean) ** 2 * torch.exp(-p.log_variance)
    # expm1(d) - d >= 0 survives rounding where exp(d) - 1 - d does not
    return 0.5 * (torch.expm1(diff) - diff + mean_term)

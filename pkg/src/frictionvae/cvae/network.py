"""Hierarchical probabilistic U-Net: prior, posterior and likelihood paths.

Layout for ``levels=3`` and three latent scales on an H x W input::

    encoder      H -> H/2 -> H/4 -> H/8          (2 res blocks per level)
    decoder      H/8 [z1] -> H/4 [z2] -> H/2 [z3] -> H -> class logits

Each latent ``z_i`` is predicted by a 1x1 Gaussian head from the decoder
features at its resolution, concatenated onto them and carried upwards, so
the head for scale ``i + 1`` already sees ``z_1..z_i``. The prior core runs
on the image alone; the posterior core sees image plus one-hot mask. The
prior core's decoder doubles as the likelihood network: during training it
is fed the posterior latents, at inference its own samples.
"""
import torch
from torch import nn
from torch.nn import functional as F

from .._layers import Encoder, level_widths, res_stack, upsample
from ..exceptions import ConfigurationError, LabelError, TrainingError
from .distributions import GaussianParams, LatentScale, kl_diag_gaussian, sample_latent


class HierarchicalCore(nn.Module):
    """U-Net encoder plus a latent-injecting decoder.

    With ``full_decoder`` the decoder runs all the way back to the input
    resolution; otherwise it stops right after the last latent scale.
    """

    def __init__(self, in_channels, widths, res_blocks, latent_channels,
                 full_decoder=True, activation="relu"):
        super().__init__()
        levels = len(widths) - 1
        n_scales = len(latent_channels)
        if not 1 <= n_scales <= levels:
            raise ConfigurationError(
                f"need 1 <= latent scales ({n_scales}) <= levels ({levels})")
        self.levels = levels
        self.latent_channels = tuple(latent_channels)
        self.encoder = Encoder(in_channels, widths, res_blocks, activation)
        self.heads = nn.ModuleList()
        self.up = nn.ModuleList()
        n_up = levels if full_decoder else n_scales - 1
        width = widths[levels]
        for j in range(levels):
            if j < n_scales:
                head = nn.Conv2d(width, 2 * latent_channels[j], 1)
                # start every scale at N(0, I) so prior and posterior agree
                nn.init.zeros_(head.weight)
                nn.init.zeros_(head.bias)
                self.heads.append(head)
                width += latent_channels[j]
            if j < n_up:
                skip = widths[levels - 1 - j]
                self.up.append(res_stack(width + skip, skip, res_blocks, activation))
                width = skip

    def forward(self, x, latents=(), noise=None, generator=None, use_mean=False):
        """Run the core, returning (list of LatentScale, decoder features).

        Scales with an entry in ``latents`` use it verbatim. The rest are
        sampled with ``noise[j]`` (or ``generator``), or set to the mean
        when ``use_mean``.
        """
        feats = self.encoder(x)
        h = feats[-1]
        scales = []
        for j in range(self.levels):
            if j < len(self.heads):
                params = GaussianParams.from_head(self.heads[j](h))
                if j < len(latents):
                    z = latents[j]
                    if z.shape != params.mean.shape:
                        raise ValueError(
                            f"latent {j} has shape {tuple(z.shape)}, "
                            f"expected {tuple(params.mean.shape)}")
                elif use_mean:
                    z = params.mean
                else:
                    z = sample_latent(params, None if noise is None else noise[j], generator)
                scales.append(LatentScale(params, z))
                h = torch.cat([h, z], dim=1)
            if j >= len(self.up):
                break
            h = self.up[j](torch.cat([upsample(h), feats[self.levels - 1 - j]], dim=1))
        return scales, h


class HierarchicalProbUNet(nn.Module):
    """Conditional VAE over segmentation masks with a hierarchy of latents."""

    def __init__(self, in_channels=3, n_classes=6, levels=3, res_blocks=2,
                 latent_channels=(4, 4, 4), base_width=8, max_width=None,
                 activation="relu"):
        super().__init__()
        if n_classes < 2:
            raise ConfigurationError("need at least two classes")
        widths = level_widths(base_width, levels, max_width)
        self.in_channels = in_channels
        self.n_classes = n_classes
        self.levels = levels
        self.latent_channels = tuple(latent_channels)
        self.prior = HierarchicalCore(in_channels, widths, res_blocks, latent_channels,
                                      full_decoder=True, activation=activation)
        self.posterior = HierarchicalCore(in_channels + n_classes, widths, res_blocks,
                                          latent_channels, full_decoder=False,
                                          activation=activation)
        self.logits = nn.Conv2d(widths[0], n_classes, 1)

    @property
    def n_scales(self):
        return len(self.latent_channels)

    def latent_shapes(self, height, width):
        """(C, H, W) of every latent scale, coarsest first."""
        return [(c, height >> (self.levels - j), width >> (self.levels - j))
                for j, c in enumerate(self.latent_channels)]

    def draw_noise(self, batch, height, width, generator=None, dtype=torch.float32):
        """One standard-normal noise tensor per latent scale."""
        return [torch.randn((batch, *shape), generator=generator, dtype=dtype)
                for shape in self.latent_shapes(height, width)]

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ConfigurationError(
                f"expected input (B, {self.in_channels}, H, W), got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        step = 2 ** self.levels
        if h % step or w % step:
            raise ConfigurationError(f"input size {h}x{w} not divisible by {step}")

    def one_hot(self, y, ignore_index=255):
        """Integer masks (B, H, W) -> one-hot (B, C', H, W); ignored pixels are all-zero."""
        valid = y != ignore_index
        if torch.any(y[valid] < 0) or torch.any(y[valid] >= self.n_classes):
            raise LabelError(f"mask class ids must lie in [0, {self.n_classes})")
        safe = torch.where(valid, y, torch.zeros_like(y))
        onehot = F.one_hot(safe, self.n_classes).permute(0, 3, 1, 2)
        return (onehot * valid.unsqueeze(1)).to(torch.get_default_dtype())

    def _posterior_input(self, x, y, ignore_index):
        if y.ndim == 3:
            y = self.one_hot(y.long(), ignore_index)
        elif y.ndim != 4 or y.shape[1] != self.n_classes:
            raise LabelError(f"one-hot masks need shape (B, {self.n_classes}, H, W)")
        if y.shape[-2:] != x.shape[-2:]:
            raise ValueError("image and mask are not spatially aligned")
        return torch.cat([x, y.to(x.dtype)], dim=1)

    def encode_prior(self, x, partial_latents=()):
        """Per-scale prior parameters given the image and any coarser latents.

        Scales beyond ``partial_latents`` are conditioned on prior means,
        which keeps the result deterministic.
        """
        self._check_input(x)
        scales, _ = self.prior(x, partial_latents, use_mean=True)
        return [s.params for s in scales]

    def encode_posterior(self, x, y, partial_latents=(), ignore_index=255):
        """Per-scale posterior parameters given image, mask and coarser latents."""
        self._check_input(x)
        scales, _ = self.posterior(self._posterior_input(x, y, ignore_index),
                                   partial_latents, use_mean=True)
        return [s.params for s in scales]

    def decode_logits(self, x, latents):
        self._check_input(x)
        if len(latents) != self.n_scales:
            raise ValueError(f"decode needs {self.n_scales} latent scales, got {len(latents)}")
        scales, h = self.prior(x, latents)
        return self.logits(h), scales

    def decode(self, x, latents):
        """Per-pixel class distribution (B, C', H, W) given all latents."""
        logits, _ = self.decode_logits(x, latents)
        return torch.softmax(logits, dim=1)

    def sample(self, x, noise=None, generator=None):
        """One prior sample: returns (class probabilities, latent scales)."""
        self._check_input(x)
        scales, h = self.prior(x, noise=noise, generator=generator)
        return torch.softmax(self.logits(h), dim=1), scales

    def predict(self, x, n_samples=16, noise=None, generator=None):
        """Average class probabilities over ``n_samples`` prior draws.

        Returns the averaged distribution (B, C', H, W) and the per-pixel
        variance of the class probabilities across draws, summed over
        classes (B, H, W).
        """
        if noise is not None:
            n_samples = len(noise)
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        probs = torch.stack([
            self.sample(x, None if noise is None else noise[i], generator)[0]
            for i in range(n_samples)])
        mean = probs.mean(dim=0)
        uncertainty = ((probs - mean) ** 2).mean(dim=0).sum(dim=1)
        return mean, uncertainty

    def elbo_loss(self, x, y, beta=1.0, noise=None, generator=None, ignore_index=255):
        """Negative conditional ELBO for a batch.

        ``loss = CE(decode(x, z ~ q), y) + beta * sum_i KL(q_i || p_i)`` with
        cross-entropy averaged over labelled pixels and each KL summed over
        latent elements, divided by H*W and averaged over the batch, so both
        terms are per-pixel quantities. The posterior latents are a single
        reparameterised draw.
        """
        self._check_input(x)
        posterior, _ = self.posterior(self._posterior_input(x, y, ignore_index),
                                      noise=noise, generator=generator)
        logits, prior = self.decode_logits(x, [s.z for s in posterior])
        target = y.long() if y.ndim == 3 else y.argmax(dim=1)
        recon = F.cross_entropy(logits, target, ignore_index=ignore_index)
        n_pixels = x.shape[-2] * x.shape[-1]
        kls = [kl_diag_gaussian(q.params, p.params).flatten(1).sum(dim=1).mean() / n_pixels
               for q, p in zip(posterior, prior)]
        loss = recon + beta * torch.stack(kls).sum()
        diagnostics = {"recon": recon, "kl": kls}
        if not torch.isfinite(loss):
            raise TrainingError(
                "non-finite ELBO loss",
                {"recon": recon.item(), "kl": [k.item() for k in kls]})
        return loss, diagnostics

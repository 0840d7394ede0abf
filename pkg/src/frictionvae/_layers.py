"""Residual U-Net building blocks shared by the CVAE and the baseline."""
import torch
from torch import nn
from torch.nn import functional as F

ACTIVATIONS = {
    "relu": nn.ReLU,
    "elu": nn.ELU,
    "silu": nn.SiLU,
    "tanh": nn.Tanh,
}


def make_activation(name):
    try:
        return ACTIVATIONS[name]()
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def level_widths(base_width, levels, max_width=None):
    """Feature widths from full resolution (index 0) down to the bottleneck."""
    widths = [base_width * 2 ** i for i in range(levels + 1)]
    if max_width is not None:
        widths = [min(w, max_width) for w in widths]
    return widths


class ResBlock(nn.Module):
    """Pre-activation residual block: act-conv3x3-act-conv3x3 plus skip."""

    def __init__(self, in_channels, out_channels, activation="relu"):
        super().__init__()
        self.act = make_activation(activation)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        if in_channels == out_channels:
            self.skip = nn.Identity()
        else:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x):
        h = self.conv1(self.act(x))
        h = self.conv2(self.act(h))
        return self.skip(x) + h


def res_stack(in_channels, out_channels, n_blocks, activation):
    blocks = [ResBlock(in_channels, out_channels, activation)]
    blocks += [ResBlock(out_channels, out_channels, activation) for _ in range(n_blocks - 1)]
    return nn.Sequential(*blocks)


class Encoder(nn.Module):
    """Stem conv at full resolution, then ``levels`` x (avg-pool, res blocks).

    Returns the feature map of every resolution, finest first.
    """

    def __init__(self, in_channels, widths, res_blocks, activation="relu"):
        super().__init__()
        self.stem = nn.Conv2d(in_channels, widths[0], 3, padding=1)
        self.levels = nn.ModuleList(
            res_stack(widths[i], widths[i + 1], res_blocks, activation)
            for i in range(len(widths) - 1))

    def forward(self, x):
        h = self.stem(x)
        feats = [h]
        for level in self.levels:
            h = level(F.avg_pool2d(h, 2))
            feats.append(h)
        return feats


def upsample(x):
    return F.interpolate(x, scale_factor=2, mode="nearest")


def to_nchw(X, dtype=torch.float32):
    """numpy (n, H, W, C) -> torch (n, C, H, W)."""
    return torch.as_tensor(X, dtype=dtype).permute(0, 3, 1, 2).contiguous()

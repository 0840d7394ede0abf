"""Training-time augmentation: five-patch cropping, then one random transform per patch."""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

BRANCHES = ("color_jitter", "random_erase", "gaussian_blur", "grayscale", "rotate")
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentConfig:
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    blur_sigma: tuple = (0.5, 2.0)
    erase_area: tuple = (0.05, 0.2)
    erase_fill: float = 0.0
    rotate_fill: float = 0.0
    ignore_index: int = 255


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _gray(x):
    if x.shape[-1] == 1:
        return x[..., 0]
    return x[..., :3] @ _LUMA


def five_patch_crop(x, y, multiple=1):
    """Four corner crops and a centre crop at half resolution.

    The patch side is half the input side rounded down to ``multiple``.
    Returns five ``(image, mask)`` pairs in the order top-left, top-right,
    bottom-left, bottom-right, centre.
    """
    H, W = x.shape[:2]
    if y.shape[:2] != (H, W):
        raise ValueError("image and mask are not aligned")
    ph, pw = (H // 2) // multiple * multiple, (W // 2) // multiple * multiple
    if ph < 1 or pw < 1:
        raise ValueError(f"image {H}x{W} too small for half-size patches divisible by {multiple}")
    offsets = [(0, 0), (0, W - pw), (H - ph, 0), (H - ph, W - pw),
               ((H - ph) // 2, (W - pw) // 2)]
    return [(x[r:r + ph, c:c + pw].copy(), y[r:r + ph, c:c + pw].copy())
            for r, c in offsets]


def color_jitter(x, rng, config=AugmentConfig()):
    def factor(spread):
        return rng.uniform(1 - spread, 1 + spread)

    out = x * factor(config.brightness)
    mean = _gray(out).mean()
    out = (out - mean) * factor(config.contrast) + mean
    gray = _gray(out)[..., None]
    out = gray + (out - gray) * factor(config.saturation)
    return np.clip(out, 0, 1).astype(x.dtype)


def random_erase(x, rng, config=AugmentConfig()):
    H, W = x.shape[:2]
    area = rng.uniform(*config.erase_area) * H * W
    aspect = np.exp(rng.uniform(np.log(0.3), np.log(3.3)))
    h = int(np.clip(round(np.sqrt(area * aspect)), 1, H))
    w = int(np.clip(round(np.sqrt(area / aspect)), 1, W))
    r, c = rng.integers(0, H - h + 1), rng.integers(0, W - w + 1)
    out = x.copy()
    out[r:r + h, c:c + w] = config.erase_fill
    return out


def gaussian_blur(x, rng, config=AugmentConfig()):
    sigma = rng.uniform(*config.blur_sigma)
    return np.clip(ndimage.gaussian_filter(x, sigma=(sigma, sigma, 0)), 0, 1).astype(x.dtype)


def grayscale(x):
    return np.repeat(_gray(x)[..., None], x.shape[-1], axis=-1).astype(x.dtype)


def rotate_pair(x, y, angle, config=AugmentConfig()):
    """Rotate image (bilinear) and mask (nearest) by ``angle`` degrees about the centre.

    Pixels rotated in from outside the frame become ``rotate_fill`` in the
    image and ``ignore_index`` in the mask.
    """
    if angle % 360 == 0:
        return x.copy(), y.copy()
    xr = ndimage.rotate(x, angle, axes=(1, 0), reshape=False, order=1,
                        mode="constant", cval=config.rotate_fill)
    yr = ndimage.rotate(y, angle, axes=(1, 0), reshape=False, order=0,
                        mode="constant", cval=config.ignore_index)
    return np.clip(xr, 0, 1).astype(x.dtype), yr.astype(y.dtype)


def random_transform(x, y, seed=None, config=AugmentConfig(), return_branch=False):
    """Apply exactly one of the five transforms, chosen uniformly.

    Only rotation touches the mask.
    """
    rng = _rng(seed)
    branch = BRANCHES[rng.integers(len(BRANCHES))]
    if branch == "color_jitter":
        out = color_jitter(x, rng, config), y.copy()
    elif branch == "random_erase":
        out = random_erase(x, rng, config), y.copy()
    elif branch == "gaussian_blur":
        out = gaussian_blur(x, rng, config), y.copy()
    elif branch == "grayscale":
        out = grayscale(x), y.copy()
    else:
        out = rotate_pair(x, y, rng.uniform(0.0, 360.0), config)
    return (*out, branch) if return_branch else out


def augment_dataset(X, y, seed=0, config=AugmentConfig(), multiple=1):
    """Replace every sample by its five transformed patches (5n samples)."""
    rng = np.random.default_rng(seed)
    images, masks = [], []
    for xi, yi in zip(X, y):
        for px, py in five_patch_crop(xi, yi, multiple):
            tx, ty = random_transform(px, py, rng, config)
            images.append(tx)
            masks.append(ty)
    return np.stack(images), np.stack(masks)

"""Procedural road scenes with segmentation masks and friction labels.

A scene is a sky band above a horizon and a drivable trapezoid whose
surface class (road, sidewalk or vegetation) sets the friction label.
Vehicles and obstacles sit on the left half of the trapezoid. When a scene
is ambiguous, a striped shoulder strip appears on the right half and is
labelled either as the drivable surface (mode 0) or as an obstacle
(mode 1) for an otherwise identical image.

Every scene is a pure function of ``(spec.seed, index)``.
"""
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np
from scipy import ndimage

ROAD, SIDEWALK, VEGETATION, SKY, VEHICLE, OBSTACLE = range(6)
CLASS_NAMES = ("road", "sidewalk", "vegetation", "sky", "vehicle", "obstacle")
SURFACE_CLASSES = (ROAD, SIDEWALK, VEGETATION)
NOT_AMBIGUOUS = -1

PALETTE = np.array([
    [128, 64, 128],
    [244, 35, 232],
    [107, 142, 35],
    [70, 130, 180],
    [0, 0, 142],
    [250, 170, 30],
], dtype=np.uint8)


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    n_classes: int = 6
    # friction of road, sidewalk, vegetation surfaces
    surface_friction: tuple = (0.8, 0.55, 0.3)
    mu_noise: float = 0.02
    p_amb: float = 0.0
    glare_prob: float = 0.3
    shadow_prob: float = 0.3
    max_blur: float = 0.8
    pixel_noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.n_classes != len(CLASS_NAMES):
            raise ValueError(f"the scene palette has exactly {len(CLASS_NAMES)} classes")
        if self.height < 16 or self.width < 16:
            raise ValueError("scenes must be at least 16x16")
        if len(self.surface_friction) != len(SURFACE_CLASSES):
            raise ValueError(f"surface_friction needs {len(SURFACE_CLASSES)} entries")
        if not all(0.0 <= m <= 1.0 for m in self.surface_friction):
            raise ValueError("surface friction values must lie in [0, 1]")
        if not 0.0 <= self.p_amb <= 1.0:
            raise ValueError("p_amb must lie in [0, 1]")
        if self.mu_noise < 0 or self.max_blur < 0 or self.pixel_noise < 0:
            raise ValueError("noise settings must be non-negative")
        object.__setattr__(self, "surface_friction", tuple(float(m) for m in self.surface_friction))

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown scene spec keys: {sorted(unknown)}")
        values = dict(values)
        if "surface_friction" in values:
            values["surface_friction"] = tuple(values["surface_friction"])
        return cls(**values)


class Scene(NamedTuple):
    image: np.ndarray           # (H, W, 3) float32 in [0, 1], multiples of 1/255
    mask: np.ndarray            # (H, W) int64 class ids
    mu: float
    mode_id: int                # NOT_AMBIGUOUS, or which labelling the strip got
    surface_class: int
    ambiguous_region: np.ndarray  # (H, W) bool


def _texture(rng, shape, base, noise):
    return np.clip(base + rng.normal(0.0, noise, shape + (3,)), 0, 1)


def generate_scene(spec, index, mode=None):
    """Render scene ``index`` of ``spec``.

    ``mode`` (0 or 1) forces an ambiguous strip with that labelling; the
    image is identical for both modes.
    """
    if mode not in (None, 0, 1):
        raise ValueError("mode must be None, 0 or 1")
    rng = np.random.default_rng([spec.seed, index])
    H, W = spec.height, spec.width
    rows = np.arange(H)[:, None].astype(float)
    cols = np.arange(W)[None, :].astype(float) + 0.5

    # draws below happen unconditionally so p_amb only toggles the strip
    ambiguous = rng.random() < spec.p_amb
    mode_draw = int(rng.integers(2))
    if mode is None:
        mode = mode_draw
    else:
        ambiguous = True
    surface = int(rng.integers(len(SURFACE_CLASSES)))
    offroad = int(rng.choice([c for c in SURFACE_CLASSES if c != surface]))
    horizon = int(round(H * rng.uniform(0.28, 0.36)))
    center = W * (0.5 + rng.uniform(-0.08, 0.08))
    top_half = W * rng.uniform(0.08, 0.14)
    bottom_half = W * rng.uniform(0.6, 0.75)

    t = np.clip((rows - horizon) / max(H - 1 - horizon, 1), 0, 1)
    half = top_half + t * (bottom_half - top_half)
    ground = np.broadcast_to(rows >= horizon, (H, W))
    drivable = ground & (np.abs(cols - center) < half)

    mask = np.full((H, W), offroad, dtype=np.int64)
    mask[~ground] = SKY
    mask[drivable] = surface

    image = np.empty((H, W, 3))
    sky_tone = np.array([0.45, 0.62, 0.92]) + 0.25 * (rows / max(horizon, 1))[..., None]
    image[:] = np.clip(sky_tone, 0, 1)
    bases = {
        ROAD: (np.array([0.30, 0.30, 0.33]), 0.03),
        SIDEWALK: (np.array([0.66, 0.60, 0.55]), 0.03),
        VEGETATION: (np.array([0.22, 0.52, 0.18]), 0.08),
    }
    for cls, (base, noise) in bases.items():
        region = mask == cls
        image[region] = _texture(rng, (H, W), base, noise)[region]
    tiles = (np.mod(rows, 6) < 1) | (np.mod(cols - 0.5, 6) < 1)
    image[(mask == SIDEWALK) & tiles] *= 0.75

    # objects on the left half of the drivable area
    for cls in [VEHICLE] * int(rng.integers(0, 3)) + [OBSTACLE] * int(rng.integers(0, 3)):
        r = rng.uniform(horizon + 0.25 * (H - horizon), H - 2)
        row_half = top_half + (r - horizon) / max(H - 1 - horizon, 1) * (bottom_half - top_half)
        c = center - rng.uniform(0.25, 0.8) * row_half
        scale = 0.35 * row_half
        if cls == VEHICLE:
            h, w = scale * 0.8, scale
            body = (np.abs(cols - c) < w / 2) & (rows <= r) & (rows > r - h)
            color = rng.choice([[0.8, 0.1, 0.1], [0.1, 0.2, 0.8], [0.92, 0.92, 0.92]])
            image[body] = color
            image[body & (rows < r - 0.6 * h)] = [0.1, 0.1, 0.12]
        else:
            size = max(scale * 0.9, 3.0)
            body = (np.abs(cols - c) < (r - rows + 1.0) * 0.45) & (rows <= r) & (rows > r - size)
            image[body] = [0.95, 0.5, 0.1]
        mask[body] = cls

    strip_rows = rows >= horizon + 0.2 * (H - horizon)
    strip = (drivable & strip_rows & (cols - center > 0.35 * half)
             & (cols - center < 0.6 * half))
    if ambiguous:
        stripes = np.mod(rows + cols, 4) < 2
        image[strip & stripes] = [0.72, 0.62, 0.30]
        image[strip & ~stripes] = [0.45, 0.36, 0.20]
        mask[strip] = surface if mode == 0 else OBSTACLE
        mode_id = mode
    else:
        strip = np.zeros((H, W), dtype=bool)
        mode_id = NOT_AMBIGUOUS

    if rng.random() < spec.glare_prob:
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        radius = W * rng.uniform(0.05, 0.15)
        glare = np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * radius ** 2))
        image += 0.6 * glare[..., None]
    if rng.random() < spec.shadow_prob:
        slope = rng.uniform(-1, 1)
        offset = rng.uniform(0, H)
        width = H * rng.uniform(0.08, 0.2)
        band = np.abs(rows + slope * cols - offset) < width / 2
        image[band] *= 0.6
    sigma = rng.uniform(0, spec.max_blur)
    if sigma > 0:
        image = ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0))
    image += rng.normal(0.0, spec.pixel_noise, image.shape)
    image = np.round(np.clip(image, 0, 1) * 255) / 255

    noise = np.clip(rng.normal(0.0, spec.mu_noise), -3 * spec.mu_noise, 3 * spec.mu_noise)
    mu = float(np.clip(spec.surface_friction[surface] + noise, 0.0, 1.0))
    return Scene(image.astype(np.float32), mask, mu, mode_id, surface, strip)


def make_arrays(spec, indices):
    """Stack scenes into arrays: images, masks, mu, mode ids, ambiguous regions."""
    scenes = [generate_scene(spec, int(i)) for i in indices]
    return (np.stack([s.image for s in scenes]),
            np.stack([s.mask for s in scenes]),
            np.array([s.mu for s in scenes]),
            np.array([s.mode_id for s in scenes]),
            np.stack([s.ambiguous_region for s in scenes]))


def split_indices(count, split_ratios, seed=0):
    """Deterministic disjoint partition of ``range(count)``.

    Sizes follow the largest-remainder rule; every split must get at least
    one scene.
    """
    ratios = np.asarray(split_ratios, dtype=float)
    if count < 1:
        raise ValueError("count must be >= 1")
    if np.any(ratios <= 0) or not np.isclose(ratios.sum(), 1.0, atol=1e-9):
        raise ValueError("split ratios must be positive and sum to 1")
    exact = ratios * count
    sizes = np.floor(exact).astype(int)
    for i in np.argsort(-(exact - sizes), kind="stable")[:count - sizes.sum()]:
        sizes[i] += 1
    if np.any(sizes < 1):
        raise ValueError(f"count {count} too small for split ratios {tuple(split_ratios)}")
    order = np.random.default_rng(seed).permutation(count)
    bounds = np.cumsum(sizes)[:-1]
    return [np.sort(part) for part in np.split(order, bounds)]


def colorize(mask):
    """Palette image (H, W, 3) uint8 for a class mask; unknown ids are black."""
    out = np.zeros(mask.shape + (3,), dtype=np.uint8)
    valid = (mask >= 0) & (mask < len(PALETTE))
    out[valid] = PALETTE[mask[valid]]
    return out

"""Manifest and raster I/O shared by the ingest pipeline and the synthetic generator.

A manifest is a JSON-lines file, one record per frame. File references
(``image``, ``mask``) are stored relative to the manifest's directory.
"""
import json
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import DataError
from .synthetic import generate_scene, split_indices

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
_PATH_KEYS = ("image", "mask")


def write_manifest(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent.resolve()
    with path.open("w") as fh:
        for rec in records:
            rec = dict(rec)
            for key in _PATH_KEYS:
                if key in rec and rec[key] is not None:
                    p = Path(rec[key]).resolve()
                    try:
                        rec[key] = p.relative_to(root).as_posix()
                    except ValueError:
                        rec[key] = Path(os.path.relpath(p, root)).as_posix()
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path):
    """Records with ``image``/``mask`` resolved to absolute paths."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            for key in _PATH_KEYS:
                if rec.get(key) is not None:
                    rec[key] = str((root / rec[key]).resolve())
            records.append(rec)
    return records


def save_image(path, image):
    Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)).save(path)


def load_image(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def save_mask(path, mask):
    Image.fromarray(np.asarray(mask).astype(np.uint8), mode="L").save(path)


def load_mask(path):
    try:
        with Image.open(path) as im:
            return np.asarray(im, dtype=np.int64)
    except OSError as exc:
        raise OSError(f"cannot read mask {path}: {exc}") from exc


def load_arrays(records):
    """Stack a manifest into ``(images, masks or None, mu or None)``."""
    if not records:
        raise DataError("manifest holds no records")
    images = np.stack([load_image(r["image"]) for r in records])
    masks = None
    if all(r.get("mask") for r in records):
        masks = np.stack([load_mask(r["mask"]) for r in records])
    mu = None
    if all(r.get("mu") is not None for r in records):
        mu = np.array([float(r["mu"]) for r in records])
    return images, masks, mu


def generate_dataset(spec, count, out_dir, split_ratios=(0.8, 0.2), split_names=("train", "val")):
    """Render ``count`` scenes to ``out_dir`` with one manifest per split.

    Layout: ``images/scene_XXXXX.png``, ``masks/scene_XXXXX.png`` and
    ``<split>.jsonl``. Returns ``{split name: manifest path}``.
    """
    if len(split_names) != len(split_ratios):
        raise ValueError("need one split name per ratio")
    splits = split_indices(count, split_ratios, spec.seed)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    manifests = {}
    for name, indices in zip(split_names, splits):
        records = []
        for i in indices:
            scene = generate_scene(spec, int(i))
            stem = f"scene_{int(i):05d}"
            image_path = out_dir / "images" / f"{stem}.png"
            mask_path = out_dir / "masks" / f"{stem}.png"
            save_image(image_path, scene.image)
            save_mask(mask_path, scene.mask)
            records.append({"frame_id": stem, "image": image_path, "mask": mask_path,
                            "timestamp": float(i), "mu": scene.mu, "source": "synthetic",
                            "mode_id": scene.mode_id, "surface_class": scene.surface_class})
        manifests[name] = out_dir / f"{name}.jsonl"
        write_manifest(records, manifests[name])
    return manifests

"""Versioned checkpoint container.

A checkpoint is an uncompressed zip readable by ``numpy.load``: one ``.npy``
member per named parameter array plus ``__meta__.json`` holding the format
version, the model kind and the estimator configuration. Member timestamps
are pinned so identical models produce identical bytes.
"""
import hashlib
import io
import json
import zipfile

import numpy as np
import torch

from .exceptions import ConfigurationError

FORMAT_VERSION = 1
_META = "__meta__.json"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def save_checkpoint(path, kind, config, arrays, extra=None):
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": _jsonable(dict(config)),
        "extra": _jsonable(dict(extra or {})),
        "arrays": sorted(arrays),
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo(_META, date_time=_EPOCH)
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]),
                                      allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_EPOCH), buf.getvalue())


def load_checkpoint(path, kind=None):
    """Return ``(meta, arrays)``; raise ConfigurationError on kind/version mismatch."""
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read(_META))
            arrays = {}
            for name in meta["arrays"]:
                with zf.open(name + ".npy") as fh:
                    arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()),
                                                            allow_pickle=False)
    except (zipfile.BadZipFile, KeyError) as exc:
        raise ConfigurationError(f"{path} is not a valid checkpoint: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(
            f"{path}: checkpoint format {meta.get('format_version')} unsupported "
            f"(expected {FORMAT_VERSION})")
    if kind is not None and meta.get("kind") != kind:
        raise ConfigurationError(f"{path}: expected a {kind!r} checkpoint, found {meta.get('kind')!r}")
    return meta, arrays


def checkpoint_kind(path):
    return load_checkpoint(path)[0]["kind"]


def state_to_arrays(module, prefix=""):
    return {prefix + k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_state(module, arrays, prefix="", source="checkpoint"):
    """Copy prefixed arrays into ``module``; every name and shape must match."""
    state = module.state_dict()
    given = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    missing, unexpected = set(state) - set(given), set(given) - set(state)
    if missing or unexpected:
        raise ConfigurationError(
            f"{source} does not match the configured architecture "
            f"(missing {sorted(missing)[:3]}, unexpected {sorted(unexpected)[:3]})")
    for name, tensor in state.items():
        if tuple(given[name].shape) != tuple(tensor.shape):
            raise ConfigurationError(
                f"{source}: parameter {name} has shape {given[name].shape}, "
                f"architecture expects {tuple(tensor.shape)}")
    module.load_state_dict({k: torch.as_tensor(v) for k, v in given.items()})


def restore_params(config, tuple_keys=()):
    """JSON lists back to tuples for the named estimator parameters."""
    return {k: tuple(v) if k in tuple_keys and isinstance(v, list) else v
            for k, v in config.items()}


def parameter_checksum(module):
    """sha256 over every parameter and buffer, in state-dict order."""
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()

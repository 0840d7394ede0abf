"""Flat, typed experiment configuration files.

A config is a TOML file holding only top-level ``key = value`` pairs whose
keys are estimator parameter names, e.g.::

    learning_rate = 1e-3
    max_iter = 1000
    latent_channels = [4, 4, 4]

Unknown keys and values whose type does not match the parameter's default
are rejected.
"""
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .exceptions import ConfigurationError


def load_config(path):
    path = Path(path)
    try:
        with path.open("rb") as fh:
            config = tomllib.load(fh)
    except FileNotFoundError:
        raise
    except (tomllib.TOMLDecodeError, OSError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    nested = [k for k, v in config.items() if isinstance(v, dict)]
    if nested:
        raise ConfigurationError(f"{path}: config must be flat, found tables {nested}")
    return config


def _coerce(key, value, default):
    if isinstance(value, list):
        value = tuple(value)
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, tuple):
        ok = isinstance(value, tuple)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigurationError(
            f"config key {key!r} expects {type(default).__name__}, got {value!r}")
    return value


def apply_config(estimator, config, exclude=("backbone", "verbose")):
    """Validate ``config`` against ``estimator``'s parameters and set them."""
    params = {k: v for k, v in estimator.get_params(deep=False).items() if k not in exclude}
    unknown = sorted(set(config) - set(params))
    if unknown:
        raise ConfigurationError(
            f"unknown config keys {unknown} for {type(estimator).__name__}; "
            f"valid keys: {sorted(params)}")
    estimator.set_params(**{k: _coerce(k, v, params[k]) for k, v in config.items()})
    return estimator

"""Friction labels from logged vehicle dynamics, synchronised to dashcam frames.

On a flat road at low speed the utilised friction coefficient is the ratio
of tyre force to normal load, ``mu = F_max / N``; with ``F = m a`` and
``N = m g`` the mass cancels and ``mu = a / g``.
"""
import bisect
import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .datasets import IMAGE_SUFFIXES, write_manifest
from .exceptions import DataError

logger = logging.getLogger(__name__)

G = 9.81
SIGNAL_COLUMNS = ("timestamp_s", "ax_mps2", "speed_mps")
OPTIONAL_COLUMNS = ("normal_force_n", "mass_kg", "slip_ratio")


@dataclass(frozen=True)
class SignalRecord:
    timestamp: float
    longitudinal_accel: float
    speed: float
    normal_force: Optional[float] = None
    mass: Optional[float] = None
    slip_ratio: Optional[float] = None


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    timestamp: float
    path: Path


@dataclass(frozen=True)
class FrictionRecord:
    frame_id: str
    mu: float
    source: str
    signal_timestamp: float

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise DataError(f"mu {self.mu} outside [0, 1] for frame {self.frame_id}")


@dataclass
class SyncReport:
    matched: int = 0
    dropped: int = 0
    dropped_ids: list = field(default_factory=list)


def compute_mu(a, g=G):
    """Normalised friction ``clamp(|a| / g, 0, 1)``.

    The magnitude is used because braking shows up as negative acceleration.
    """
    if not g > 0:
        raise ValueError("g must be positive")
    if not math.isfinite(a):
        raise DataError(f"non-finite acceleration {a!r}")
    return min(abs(a) / g, 1.0)


def compute_mu_max(f_max, normal_force):
    """Friction coefficient from peak tyre force and normal load, clamped to [0, 1]."""
    if not math.isfinite(f_max) or not math.isfinite(normal_force):
        raise DataError("non-finite force")
    if normal_force <= 0:
        raise DataError(f"normal force must be positive, got {normal_force}")
    return min(max(f_max / normal_force, 0.0), 1.0)


def _check_sorted(timestamps, what):
    t = np.asarray(timestamps, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DataError(f"{what} timestamps must be finite")
    if np.any(np.diff(t) < 0):
        raise DataError(f"{what} are not sorted by timestamp")


def synchronize(frames, signals, tolerance=0.05):
    """Pair every frame with the nearest-in-time signal record.

    Frames farther than ``tolerance`` seconds from every signal are dropped
    and counted in the report. Ties go to the earlier signal. Returns
    ``(pairs, report)`` with ``pairs`` a list of ``(frame_id, SignalRecord)``
    in frame order.
    """
    if not signals:
        raise DataError("empty signal log")
    if tolerance < 0:
        raise ValueError("tolerance must be non-negative")
    _check_sorted([f.timestamp for f in frames], "frames")
    times = [s.timestamp for s in signals]
    _check_sorted(times, "signals")
    pairs, report = [], SyncReport()
    for frame in frames:
        i = bisect.bisect_left(times, frame.timestamp)
        candidates = [j for j in (i - 1, i) if 0 <= j < len(times)]
        best = min(candidates, key=lambda j: (abs(times[j] - frame.timestamp), j))
        # first of any run of duplicate timestamps
        best = bisect.bisect_left(times, times[best])
        if abs(times[best] - frame.timestamp) <= tolerance:
            pairs.append((frame.frame_id, signals[best]))
            report.matched += 1
        else:
            report.dropped += 1
            report.dropped_ids.append(frame.frame_id)
    return pairs, report


def peak_accel(signals, t, window):
    """Largest ``|a|`` among signals within ``window / 2`` seconds of ``t``."""
    times = [s.timestamp for s in signals]
    lo = bisect.bisect_left(times, t - window / 2)
    hi = bisect.bisect_right(times, t + window / 2)
    return max((abs(s.longitudinal_accel) for s in signals[lo:hi]), default=0.0)


def _optional_float(row, key):
    value = row.get(key)
    if value is None or value.strip() == "":
        return None
    return float(value)


def read_signals(path, max_abs_accel=20.0):
    """Read a signal CSV; rows failing the ``|a| < max_abs_accel`` check are skipped.

    Returns ``(records, n_implausible)``.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise OSError(f"cannot read signal log {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        missing = set(SIGNAL_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        records, implausible = [], 0
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = SignalRecord(float(row["timestamp_s"]), float(row["ax_mps2"]),
                                   float(row["speed_mps"]),
                                   *(_optional_float(row, k) for k in OPTIONAL_COLUMNS))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if not (math.isfinite(rec.timestamp) and math.isfinite(rec.longitudinal_accel)):
                raise DataError(f"{path}:{lineno}: non-finite value")
            if abs(rec.longitudinal_accel) >= max_abs_accel:
                implausible += 1
                continue
            records.append(rec)
    return records, implausible


_TIME = re.compile(r"(-?\d+(?:\.\d+)?)$")


def discover_frames(frames_dir):
    """Frames in ``frames_dir`` sorted by timestamp.

    Timestamps come from ``frames.csv`` (columns ``frame_id, timestamp_s,
    path``) when present, otherwise from the trailing number of each file
    stem, e.g. ``frame_12.340.png`` -> 12.34 s.
    """
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise OSError(f"frames directory not found: {frames_dir}")
    index = frames_dir / "frames.csv"
    frames = []
    if index.is_file():
        with index.open(newline="") as fh:
            for row in csv.DictReader(fh):
                frames.append(FrameRecord(row["frame_id"], float(row["timestamp_s"]),
                                          frames_dir / row["path"]))
    else:
        for p in sorted(frames_dir.iterdir()):
            if p.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            m = _TIME.search(p.stem)
            if m is None:
                raise DataError(f"cannot read a timestamp from frame name {p.name}")
            frames.append(FrameRecord(p.stem, float(m.group(1)), p))
    frames.sort(key=lambda f: (f.timestamp, f.frame_id))
    for f in frames:
        if not f.path.is_file():
            raise OSError(f"frame image not found: {f.path}")
    return frames


def build_dataset(frames_dir, signals_file, tolerance=0.05, manifest_path=None,
                  mode="instantaneous", window=0.5, g=G, max_abs_accel=20.0):
    """Label every frame with ``mu`` from the synchronised signal log.

    ``mode="instantaneous"`` uses the matched sample's acceleration;
    ``mode="peak"`` uses the largest ``|a|`` within ``window`` seconds.
    Writes a JSON-lines manifest when ``manifest_path`` is given (image
    paths relative to it). Returns ``(records, summary)``.
    """
    if mode not in ("instantaneous", "peak"):
        raise ValueError(f"unknown labelling mode {mode!r}")
    frames = discover_frames(frames_dir)
    signals, implausible = read_signals(signals_file, max_abs_accel)
    summary = {"frames": len(frames), "implausible_signals": implausible, "mode": mode,
               "tolerance_s": tolerance}
    if not frames:
        logger.warning("no frames found in %s", frames_dir)
        records, report = [], SyncReport()
    else:
        pairs, report = synchronize(frames, signals, tolerance)
        by_id = {f.frame_id: f for f in frames}
        records = []
        for frame_id, sig in pairs:
            a = sig.longitudinal_accel if mode == "instantaneous" else \
                peak_accel(signals, by_id[frame_id].timestamp, window)
            records.append(FrictionRecord(frame_id, compute_mu(a, g), "measured", sig.timestamp))
    mus = np.array([r.mu for r in records])
    hist, edges = np.histogram(mus, bins=10, range=(0.0, 1.0))
    summary.update({"count": len(records), "dropped": report.dropped,
                    "dropped_ids": report.dropped_ids,
                    "mu_histogram": {"edges": edges.round(3).tolist(), "counts": hist.tolist()}})
    if manifest_path is not None:
        by_id = {f.frame_id: f for f in frames}
        write_manifest([{"frame_id": r.frame_id, "image": by_id[r.frame_id].path,
                         "timestamp": by_id[r.frame_id].timestamp, "mu": r.mu,
                         "source": r.source, "signal_timestamp": r.signal_timestamp}
                        for r in records], manifest_path)
    return records, summary

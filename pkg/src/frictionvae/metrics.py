"""Segmentation and friction evaluation metrics, plus run comparison reports."""
import csv
from itertools import combinations
from pathlib import Path

import numpy as np


def mean_iou(pred, truth, n_classes, ignore_index=None):
    """Per-class and mean intersection-over-union.

    Pixels where either mask holds ``ignore_index`` are dropped. A class
    absent from both masks gets IoU ``nan`` and is excluded from the mean.
    Returns ``(per_class, mean)``; ``mean`` is ``nan`` when no class is
    present at all.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    pred, truth = pred.ravel(), truth.ravel()
    if ignore_index is not None:
        keep = (pred != ignore_index) & (truth != ignore_index)
        pred, truth = pred[keep], truth[keep]
    per_class = np.full(n_classes, np.nan)
    for k in range(n_classes):
        p, t = pred == k, truth == k
        union = np.count_nonzero(p | t)
        if union:
            per_class[k] = np.count_nonzero(p & t) / union
    present = ~np.isnan(per_class)
    mean = float(per_class[present].mean()) if present.any() else float("nan")
    return per_class, mean


def sample_diversity(samples, n_classes, ignore_index=None):
    """Mean over unordered sample pairs of ``1 - mean IoU``; 0 when all samples agree."""
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("sample_diversity needs at least two samples")
    scores = []
    for a, b in combinations(samples, 2):
        _, miou = mean_iou(a, b, n_classes, ignore_index)
        # nothing left after masking counts as agreement
        scores.append(0.0 if np.isnan(miou) else 1.0 - miou)
    return float(np.mean(scores))


def rmse(predictions, targets):
    """Root mean squared error between two equal-length sequences."""
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.size == 0 or t.size == 0:
        raise ValueError("rmse of empty inputs")
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} predictions, {t.size} targets")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def read_learning_curve(path, column="val_rmse"):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"run file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or column not in rows[0]:
        raise ValueError(f"{path}: expected a {column!r} column")
    return [int(r["epoch"]) for r in rows], [float(r[column]) for r in rows]


def compare_models(runs, table_path=None, plot_path=None, column="val_rmse"):
    """Best (minimum) validation RMSE of every run, sorted ascending.

    ``runs`` maps a model name to its learning-curve CSV (columns ``epoch``
    and ``column``). Writes a CSV table and an overlay plot when paths are
    given. Returns a list of ``(name, best_rmse, best_epoch)``.
    """
    if not runs:
        raise ValueError("compare_models needs at least one run")
    curves = {name: read_learning_curve(p, column) for name, p in runs.items()}
    rows = []
    for name, (epochs, values) in curves.items():
        best = int(np.argmin(values))
        rows.append((name, values[best], epochs[best]))
    rows.sort(key=lambda r: (r[1], r[0]))
    if table_path is not None:
        with open(table_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["model", "best_rmse", "best_epoch"])
            for name, value, epoch in rows:
                writer.writerow([name, repr(value), epoch])
    if plot_path is not None:
        import matplotlib
        matplotlib.use("Agg")
        from matplotlib import pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for name, (epochs, values) in curves.items():
            ax.plot(epochs, values, label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel(column.replace("_", " "))
        ax.legend()
        fig.tight_layout()
        fig.savefig(plot_path)
        plt.close(fig)
    return rows


def plot_force_vs_time(per_frame_csv, plot_path, time_column="timestamp"):
    """Predicted and true friction over time (frame order when no timestamp column)."""
    import matplotlib
    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    with open(per_frame_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{per_frame_csv} holds no frames")
    if time_column in rows[0]:
        t = [float(r[time_column]) for r in rows]
    else:
        t = list(range(len(rows)))
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(t, [float(r["mu_true"]) for r in rows], label="measured")
    ax.plot(t, [float(r["mu_pred"]) for r in rows], label="estimated")
    ax.set_xlabel("time [s]" if time_column in rows[0] else "frame")
    ax.set_ylabel("normalised friction")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(plot_path)
    plt.close(fig)

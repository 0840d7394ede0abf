"""Command line entry point: ``frictionvae {generate,ingest,train,eval,infer,compare}``.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
``FRICTIONVAE_SEED`` sets the default ``--seed``; relative data paths are
resolved against ``FRICTIONVAE_DATA_ROOT`` when it is set.
"""
import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import datasets
from .baseline import EndToEndFrictionRegressor
from .checkpoint import checkpoint_kind
from .config import apply_config, load_config
from .cvae.estimator import HierarchicalCVAESegmenter
from .exceptions import ConfigurationError, DataError, LabelError
from .friction import LatentFrictionRegressor
from .ground_truth import build_dataset
from .metrics import compare_models, mean_iou, plot_force_vs_time, rmse
from .synthetic import CLASS_NAMES, SceneSpec, colorize, split_indices

logger = logging.getLogger("frictionvae")

MODELS = {
    "cvae": HierarchicalCVAESegmenter,
    "friction-latent": LatentFrictionRegressor,
    "end2end": EndToEndFrictionRegressor,
}
KINDS = {"cvae_segmenter": HierarchicalCVAESegmenter,
         "friction_latent": LatentFrictionRegressor,
         "end2end": EndToEndFrictionRegressor}


class UsageError(Exception):
    pass


def _data_path(p):
    p = Path(p)
    root = os.environ.get("FRICTIONVAE_DATA_ROOT")
    return Path(root) / p if root and not p.is_absolute() else p


def _default_seed():
    value = os.environ.get("FRICTIONVAE_SEED")
    try:
        return int(value) if value is not None else 0
    except ValueError:
        raise UsageError(f"FRICTIONVAE_SEED must be an integer, got {value!r}") from None


def _layout(out):
    out = Path(out)
    dirs = {name: out / name for name in ("checkpoints", "logs", "reports")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _attach_file_log(path):
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.getLogger("frictionvae").addHandler(handler)
    return handler


def cmd_generate(args):
    values = load_config(_data_path(args.spec)) if args.spec else {}
    if args.seed is not None:
        values["seed"] = args.seed
    elif "FRICTIONVAE_SEED" in os.environ:
        values["seed"] = _default_seed()
    try:
        spec = SceneSpec.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid scene spec: {exc}") from exc
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    manifests = datasets.generate_dataset(spec, args.count, args.out, tuple(args.split),
                                          tuple(args.split_names))
    for name, path in manifests.items():
        print(f"{name}: {path}")
    return 0


def cmd_ingest(args):
    signals = _data_path(args.signals)
    if not signals.is_file():
        raise FileNotFoundError(f"signal log not found: {signals}")
    records, summary = build_dataset(_data_path(args.frames), signals, args.tolerance,
                                     args.out, mode=args.mode, window=args.window)
    summary_path = Path(args.out).with_suffix(".summary.json")
    summary_path.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"{len(records)} labelled frames, {summary['dropped']} dropped -> {args.out}")
    return 0


def _load_split(args, need):
    train = datasets.read_manifest(_data_path(args.data))
    if args.val:
        val = datasets.read_manifest(_data_path(args.val))
    elif need == "mu":
        if len(train) < 2:
            raise DataError("need at least two records to hold out a validation split")
        tr_idx, va_idx = split_indices(len(train), (0.8, 0.2), args.seed)
        train, val = [train[i] for i in tr_idx], [train[i] for i in va_idx]
    else:
        val = None
    return train, val


def cmd_train(args):
    if args.model == "friction-latent" and not args.backbone:
        raise UsageError("--model friction-latent requires --backbone CHECKPOINT")
    dirs = _layout(args.out)
    name = args.model.replace("-", "_")
    handler = _attach_file_log(dirs["logs"] / f"{name}.log")
    try:
        est = MODELS[args.model]()
        if args.config:
            apply_config(est, load_config(_data_path(args.config)))
        est.set_params(random_state=args.seed, verbose=args.log_every)
        if args.model == "friction-latent":
            est.set_params(backbone=HierarchicalCVAESegmenter.load(_data_path(args.backbone)))
        train, val = _load_split(args, "mask" if args.model == "cvae" else "mu")
        X, y_mask, mu = datasets.load_arrays(train)
        if args.model == "cvae":
            if y_mask is None:
                raise DataError("cvae training needs masks in the manifest")
            est.fit(X, y_mask)
            rows = est.history_
            final = rows[-1]["total_loss"] if rows else float("nan")
        else:
            if mu is None:
                raise DataError("friction training needs mu labels in the manifest")
            Xv, _, muv = datasets.load_arrays(val)
            est.fit(X, mu, Xv, muv)
            rows = est.history_
            final = rows[-1]["val_rmse"]
        ckpt = dirs["checkpoints"] / f"{name}.ckpt"
        est.save(ckpt)
        if rows:
            _write_csv(dirs["logs"] / f"{name}_train.csv", rows)
        logger.info("saved %s (final %s %.6g)", ckpt, "loss" if args.model == "cvae" else "val rmse", final)
        print(json.dumps({"checkpoint": str(ckpt), "final": final}))
    finally:
        logging.getLogger("frictionvae").removeHandler(handler)
        handler.close()
    return 0


def _load_model(path):
    path = _data_path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    kind = checkpoint_kind(path)
    if kind not in KINDS:
        raise ConfigurationError(f"{path}: unknown model kind {kind!r}")
    return kind, KINDS[kind].load(path)


def evaluate_segmenter(model, X, y, n_classes, ignore_index=255):
    per_class, miou = mean_iou(model.predict(X), y, n_classes, ignore_index)
    return {"n": int(len(X)), "mean_iou": miou,
            "per_class_iou": {CLASS_NAMES[k] if n_classes == len(CLASS_NAMES) else str(k):
                              (None if np.isnan(v) else float(v))
                              for k, v in enumerate(per_class)}}


def evaluate_friction(model, X, mu, records, per_frame_path):
    pred = model.predict(X)
    rows = [{"frame_id": r.get("frame_id", str(i)), "timestamp": r.get("timestamp", float(i)),
             "mu_pred": float(p), "mu_true": float(t)}
            for i, (r, p, t) in enumerate(zip(records, pred, mu))]
    _write_csv(per_frame_path, rows)
    return {"n": int(len(X)), "rmse": rmse(pred, mu), "per_frame_csv": str(per_frame_path)}


def cmd_eval(args):
    kind, model = _load_model(args.model)
    records = datasets.read_manifest(_data_path(args.data))
    X, masks, mu = datasets.load_arrays(records)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    if kind == "cvae_segmenter":
        if masks is None:
            raise DataError("segmentation evaluation needs masks in the manifest")
        report = evaluate_segmenter(model, X, masks, model.n_classes, model.ignore_index)
    else:
        if mu is None:
            raise DataError("friction evaluation needs mu labels in the manifest")
        per_frame = report_path.with_suffix(".frames.csv")
        report = evaluate_friction(model, X, mu, records, per_frame)
        if args.plot:
            plot_force_vs_time(per_frame, report_path.with_suffix(".force.png"))
    report = {"model": kind, "checkpoint": str(args.model), **report}
    report_path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(json.dumps({k: v for k, v in report.items() if k != "per_class_iou"}))
    return 0


def cmd_infer(args):
    kind, model = _load_model(args.model)
    image = datasets.load_image(_data_path(args.image))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = {"model": kind, "image": str(args.image), "samples": args.samples}
    segmenter = {"cvae_segmenter": model, "friction_latent": getattr(model, "backbone", None)}.get(kind)
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    if segmenter is not None:
        probs, unc = segmenter.predict_proba(image[None], n_samples=args.samples,
                                             random_state=args.seed, return_uncertainty=True)
        mask = probs[0].argmax(axis=-1)
        datasets.save_mask(out / "mask.png", mask)
        Image.fromarray(colorize(mask)).save(out / "mask_color.png")
        datasets.save_image(out / "uncertainty.png", np.clip(unc[0], 0, 1))
        np.save(out / "probabilities.npy", probs[0])
        np.save(out / "uncertainty.npy", unc[0])
        result.update({"mask": str(out / "mask.png"), "uncertainty": str(out / "uncertainty.png"),
                       "mean_uncertainty": float(unc[0].mean())})
    if kind != "cvae_segmenter":
        result["mu"] = float(model.predict(image[None])[0])
    (out / "result.json").write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_compare(args):
    runs = {}
    for item in args.run:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--run expects NAME=PATH, got {item!r}")
        runs[name] = _data_path(path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = compare_models(runs, out / "comparison.csv", out / "comparison.png")
    for name, value, epoch in rows:
        print(f"{name}\t{value:.6g}\t(epoch {epoch})")
    return 0


def build_parser():
    seed_help = "random seed (default: $FRICTIONVAE_SEED or 0)"
    parser = argparse.ArgumentParser(prog="frictionvae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic dataset")
    p.add_argument("--spec", help="scene spec config (TOML)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", type=float, nargs="+", default=[0.8, 0.2])
    p.add_argument("--split-names", nargs="+", default=["train", "val"])
    p.add_argument("--seed", type=int, default=None, help="overrides the spec seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest", help="label dashcam frames from a signal log")
    p.add_argument("--frames", required=True)
    p.add_argument("--signals", required=True)
    p.add_argument("--out", required=True, help="output manifest (.jsonl)")
    p.add_argument("--tolerance", type=float, default=0.05, help="seconds (default 0.05)")
    p.add_argument("--mode", choices=["instantaneous", "peak"], default="instantaneous")
    p.add_argument("--window", type=float, default=0.5, help="peak-mode window in seconds")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--model", choices=sorted(MODELS), required=True)
    p.add_argument("--data", required=True, help="training manifest")
    p.add_argument("--val", help="validation manifest")
    p.add_argument("--config", help="flat TOML of estimator parameters")
    p.add_argument("--backbone", help="cvae checkpoint (friction-latent only)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help=seed_help)
    p.add_argument("--log-every", type=int, default=0, help="progress log interval")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--plot", action="store_true", help="also plot friction against time")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint on one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help=seed_help)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("compare", help="tabulate and plot validation RMSE of training runs")
    p.add_argument("--run", action="append", required=True, metavar="NAME=CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if getattr(args, "seed", 0) is None and args.command != "generate":
            args.seed = _default_seed()
        return args.func(args)
    except (UsageError, ConfigurationError, LabelError, FileNotFoundError) as exc:
        print(f"frictionvae {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError, RuntimeError, ValueError) as exc:
        print(f"frictionvae {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

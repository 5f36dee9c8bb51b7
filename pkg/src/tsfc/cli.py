"""Command-line front end: encode, train, eval, crossval, explain, synth."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .autodiff import NumericError, ShapeError
from .data import DataFormatError, SynthSpec, load_dataset, save_csv_long, save_multichannel_dir, stratified_kfold, synth_generate
from .encoding import METHODS, EncodingConfig, LengthError, encode_channel, write_pgm
from .explain import export_cam, gradcam
from .harness import (PROFILES, Checkpoint, CheckpointFormatError, EncodedDataset, TrainConfig, cross_validate,
                      evaluate, load_checkpoint, save_checkpoint, train)
from .model import ATTENTION, CONCAT, forward

log = logging.getLogger("tsfc")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

# flag dest -> TrainConfig field
CONFIG_KEYS = {
    "image_size": "image_size", "bins": "mtf_bins", "lr": "lr", "epochs": "epochs", "seed": "seed",
    "method": "method", "pooling": "pooling", "arch": "arch", "folds": "n_folds", "runs": "n_runs",
}


class UsageError(Exception):
    pass


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset directory (dim-file format) or long CSV file")
    p.add_argument("--format", choices=["auto", "dir", "csv"], default="auto", help="dataset format (default: auto)")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=["wafer", "cpx", "custom"], default="cpx",
                   help="wafer: lr=0.0023, arch=wafer; cpx: lr=3e-4, arch=cpx; custom: no presets")
    p.add_argument("--config", help="JSON file with the same keys as the flags; flags win on conflict")
    p.add_argument("--method", choices=METHODS, help="image encoding (default gadf)")
    p.add_argument("--pooling", choices=[ATTENTION, CONCAT], help="channel aggregation (default attention)")
    p.add_argument("--arch", choices=["wafer", "cpx"], help="CNN encoder variant")
    p.add_argument("--image-size", type=int, help="field image side S (default 64)")
    p.add_argument("--bins", type=int, help="MTF quantile bins Q (default 8)")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--epochs", type=int, help="training epochs (default 100)")
    p.add_argument("--folds", type=int, help="cross-validation folds (default 5)")
    p.add_argument("--seed", type=int, help="random seed (falls back to $TSFC_SEED, then 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsfc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="write PGM images of encoded channels")
    _add_data_args(p)
    p.add_argument("--method", choices=METHODS, required=True, help="image encoding")
    p.add_argument("--sample", type=int, action="append", required=True, help="sample index (repeatable)")
    p.add_argument("--image-size", type=int, default=64, help="field image side S (default 64)")
    p.add_argument("--bins", type=int, default=8, help="MTF quantile bins Q (default 8)")
    p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("train", help="train one fold iteration and save the best checkpoint")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--fold", type=int, default=0, help="fold iteration providing test/validation roles")
    p.add_argument("--out", default="out", help="output directory (writes model.ckpt)")

    p = sub.add_parser("eval", help="error rate of a checkpoint on a dataset")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--fold", type=int, help="score only this fold's test samples (plan from the checkpoint seed)")

    p = sub.add_parser("crossval", help="repeated stratified k-fold cross-validation")
    _add_data_args(p)
    _add_model_args(p)
    p.add_argument("--runs", type=int, help="independent runs (default 20)")
    p.add_argument("--jobs", type=int, default=1, help="parallel fold x run cells (default 1)")
    p.add_argument("--out", default="out", help="output directory (writes results.csv)")

    p = sub.add_parser("explain", help="attention report and Grad-CAM overlays")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--sample", type=int, action="append", required=True, help="sample index (repeatable)")
    p.add_argument("--top-attended", type=int, default=None,
                   help="overlays for the A most attended channels (default 3)")
    p.add_argument("--channels", type=int, nargs="+", help="explicit channel indices (needed for concat models)")
    p.add_argument("--target-class", type=int, help="class to explain (default: predicted class)")
    p.add_argument("--cam-out", default="cams", help="directory for PPM overlays")

    p = sub.add_parser("synth", help="generate a synthetic ramp dataset")
    p.add_argument("--out", required=True, help="output directory (dim-file format) or .csv path")
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--length", type=int, default=128)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, help="random seed (falls back to $TSFC_SEED, then 0)")
    return parser


def _env_seed() -> int:
    raw = os.environ.get("TSFC_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"TSFC_SEED must be an integer, got {raw!r}") from None


def resolve_config(args: argparse.Namespace) -> TrainConfig:
    """Profile presets < config file < explicit flags; seed falls back to $TSFC_SEED."""
    values: dict = {}
    if args.profile in PROFILES:
        values.update(PROFILES[args.profile])
    if getattr(args, "config", None):
        try:
            file_values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(file_values) - set(CONFIG_KEYS) - {"profile"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if "profile" in file_values and file_values["profile"] in PROFILES:
            values.update(PROFILES[file_values["profile"]])
        values.update({CONFIG_KEYS[k]: v for k, v in file_values.items() if k in CONFIG_KEYS})
    for flag, key in CONFIG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    values.setdefault("seed", _env_seed())
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _load(args):
    return load_dataset(args.data, args.format)


def _sample_indices(indices, n):
    for i in indices:
        if not 0 <= i < n:
            raise UsageError(f"sample index {i} out of range (dataset has {n} samples)")
    return indices


def cmd_encode(args) -> int:
    ds = _load(args)
    cfg = EncodingConfig(args.image_size, args.bins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in _sample_indices(args.sample, len(ds)):
        for k, series in enumerate(ds.samples[i].channels):
            img = encode_channel(series, args.method, cfg, k)
            path = write_pgm(img, out / f"{i}_{k}_{args.method}.pgm")
            print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _load(args)
    cfg = resolve_config(args)
    if not 0 <= args.fold < cfg.n_folds:
        raise UsageError(f"--fold must be in [0, {cfg.n_folds})")
    plan = stratified_kfold(ds, cfg.n_folds, cfg.seed)
    tr, va, te = plan.roles(args.fold)
    data = EncodedDataset(ds, cfg.method, cfg.encoding)
    ckpt = train(data, tr, va, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = save_checkpoint(ckpt, out / "model.ckpt")
    err = evaluate(ckpt, data, te)
    print(f"checkpoint: {path}")
    print(f"best epoch {ckpt.epoch}, validation accuracy {ckpt.best_val_acc:.4f}")
    print(f"test error: {err:.2f}%")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = _load(args)
    cfg = ckpt.config
    data = EncodedDataset(ds, cfg.method, cfg.encoding)
    idx = None
    if args.fold is not None:
        idx = stratified_kfold(ds, cfg.n_folds, cfg.seed).roles(args.fold)[2]
    err = evaluate(ckpt, data, idx)
    n = len(ds) if idx is None else len(idx)
    print(f"error: {err:.2f}% on {n} samples")
    return EXIT_OK


def cmd_crossval(args) -> int:
    ds = _load(args)
    cfg = resolve_config(args)

    def progress(cell):
        print(f"run {cell.run} fold {cell.fold}: error {cell.error_pct:.2f}% (best epoch {cell.best_epoch})",
              flush=True)

    result = cross_validate(ds, cfg, jobs=args.jobs, progress=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = result.write_csv(out / "results.csv")
    print(f"results: {csv_path}")
    print(f"{cfg.pooling}-{cfg.method} ({cfg.arch}) {result.summary()}")
    return EXIT_OK


def attention_report(ckpt: Checkpoint, images) -> list[tuple[int, float]]:
    weights = forward(images, ckpt.params).attention
    if weights is None:
        return []
    w = weights.data.astype(np.float64)
    order = sorted(range(w.size), key=lambda k: (-w[k], k))
    return [(k, float(w[k])) for k in order]


def cmd_explain(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = _load(args)
    cfg = ckpt.config
    if ckpt.params.pooling_mode != ATTENTION and args.channels is None:
        raise UsageError("checkpoint uses concat pooling: no attention weights exist; "
                         "pass --channels instead of --top-attended")
    if args.top_attended is not None and args.channels is not None:
        raise UsageError("--top-attended and --channels are mutually exclusive")
    top = 3 if args.top_attended is None else args.top_attended
    if top < 1:
        raise UsageError("--top-attended must be positive")
    data = EncodedDataset(ds, cfg.method, cfg.encoding)
    if data.num_channels != ckpt.params.num_channels:
        raise ShapeError(f"checkpoint expects {ckpt.params.num_channels} channels, data has {data.num_channels}")
    out = Path(args.cam_out)
    out.mkdir(parents=True, exist_ok=True)
    for i in _sample_indices(args.sample, len(ds)):
        imgs = data.images(i)
        logits = forward(imgs, ckpt.params).logits.data
        target = int(np.argmax(logits)) if args.target_class is None else args.target_class
        print(f"sample {i}: label {ds.samples[i].label}, predicted {int(np.argmax(logits))}, explaining class {target}")
        ranking = attention_report(ckpt, imgs)
        for k, w in ranking:
            print(f"  {ds.channel_names[k]:>12s} (channel {k}): attention {w:.4f}")
        channels = args.channels if args.channels is not None else [k for k, _ in ranking[:top]]
        for k in channels:
            if not 0 <= k < data.num_channels:
                raise UsageError(f"channel {k} out of range")
            cam = gradcam(ckpt.params, imgs, target, k)
            path = export_cam(cam, imgs[k], out / f"{i}_{k}_{cfg.method}_cam.ppm")
            print(f"  wrote {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    spec = SynthSpec(args.channels, args.length, args.per_class, args.classes, args.noise)
    ds = synth_generate(spec, seed)
    out = Path(args.out)
    if out.suffix == ".csv":
        out.parent.mkdir(parents=True, exist_ok=True)
        save_csv_long(ds, out)
    else:
        save_multichannel_dir(ds, out, name="Synth")
    print(f"wrote {len(ds)} samples, {ds.num_channels} channels to {out}")
    return EXIT_OK


COMMANDS = {"encode": cmd_encode, "train": cmd_train, "eval": cmd_eval, "crossval": cmd_crossval,
            "explain": cmd_explain, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"tsfc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, DataFormatError, CheckpointFormatError, ShapeError, LengthError, OSError, ValueError) as exc:
        print(f"tsfc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

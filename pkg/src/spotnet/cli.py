"""Command-line surface: synth, train, eval, infer, gradcheck.

Flag precedence is CLI > config file (--config, JSON) > built-in
defaults, and every run echoes its fully resolved configuration
(including the seed) before doing anything. Exit codes: 0 success,
1 usage/configuration, 2 data or format problems, 3 numeric failure.

--threads (default 1, for bit-reproducible runs) caps the BLAS pools at
runtime via threadpoolctl and exports the usual env caps for any child
processes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse usage errors onto exit code 1
        raise UsageError(message)


SYNTH_DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "train_matches": 30,
    "val_matches": 10,
    "test_matches": 10,
    "match_minutes": 10.0,
    "feature_dim": 64,
    "feature_rate": 2.0,
    "num_classes": 3,
    "event_spacing": 60.0,
    "signature_strength": 4.0,
    "signature_horizon": 50,
    "pre_cue_strength": 1.0,
    "pre_cue_train_only": False,
    "noise_scale": 1.0,
    "force": False,
}

TRAIN_DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "feature_dim": None,       # inferred from the data when not given
    "clip_len": 41,
    "num_classes": 3,
    "kernel_size": 9,
    "dropout": 0.1,
    "lam": 10.0,
    "no_mask": False,
    "mask_p": 1.0 / 3.0,
    "mask_q": 0.5,
    "mask_side": "before",
    "epochs": 50,
    "batch_size": 64,
    "lr": 0.05,
    "momentum": 0.9,
    "weight_decay": 1e-4,
    "patience": 10,
    "n_foreground": 3000,
    "delta_grid": "5:60:5",
    "halftime_window": 120.0,
}

EVAL_DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "split": "test",
    "delta_grid": "5:60:5",
    "fixed_center": False,
    "stride": None,            # model clip length when not given
    "predictions": None,
    "num_classes": 3,
}

INFER_DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "split": "test",
    "stride": None,
    "fixed_center": False,
    "vote_density": None,
}

GRADCHECK_DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "bits": 64,
    "epsilon": None,
    "tolerance": None,
    "inject_error": False,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="spotnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with flag defaults")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int, help="BLAS thread cap (default 1)")

    p = sub.add_parser("synth", help="generate a synthetic corpus on disk")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", default=None)
    p.add_argument("--train-matches", type=int, dest="train_matches")
    p.add_argument("--val-matches", type=int, dest="val_matches")
    p.add_argument("--test-matches", type=int, dest="test_matches")
    p.add_argument("--match-minutes", type=float, dest="match_minutes")
    p.add_argument("--feature-dim", type=int, dest="feature_dim")
    p.add_argument("--feature-rate", type=float, dest="feature_rate")
    p.add_argument("--num-classes", type=int, dest="num_classes")
    p.add_argument("--event-spacing", type=float, dest="event_spacing",
                   help="mean seconds between events")
    p.add_argument("--signature-strength", type=float, dest="signature_strength")
    p.add_argument("--signature-horizon", type=int, dest="signature_horizon")
    p.add_argument("--pre-cue-strength", type=float, dest="pre_cue_strength")
    p.add_argument("--pre-cue-train-only", action="store_true", default=None,
                   dest="pre_cue_train_only",
                   help="plant the pre-event cue in the train split only")
    p.add_argument("--noise-scale", type=float, dest="noise_scale")

    p = sub.add_parser("train", help="train a spotter on a corpus")
    common(p)
    p.add_argument("--data", required=True, help="corpus dir with train/ and val/")
    p.add_argument("--out", required=True)
    p.add_argument("--feature-dim", type=int, dest="feature_dim")
    p.add_argument("--clip-len", type=int, dest="clip_len")
    p.add_argument("--num-classes", type=int, dest="num_classes")
    p.add_argument("--kernel-size", type=int, dest="kernel_size")
    p.add_argument("--dropout", type=float)
    p.add_argument("--lambda", type=float, dest="lam",
                   help="offset-loss weight (0 disables offset supervision)")
    p.add_argument("--no-mask", action="store_true", default=None, dest="no_mask")
    p.add_argument("--mask-p", type=float, dest="mask_p")
    p.add_argument("--mask-q", type=float, dest="mask_q")
    p.add_argument("--mask-side", choices=("before", "after"), dest="mask_side")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--patience", type=int)
    p.add_argument("--n-foreground", type=int, dest="n_foreground")
    p.add_argument("--delta-grid", dest="delta_grid",
                   help="start:stop:step or comma list, seconds")
    p.add_argument("--halftime-window", type=float, dest="halftime_window",
                   help="seconds around the half boundary to drop substitutions")

    p = sub.add_parser("eval", help="run inference and the tolerance-swept metric")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split")
    p.add_argument("--delta-grid", dest="delta_grid")
    p.add_argument("--fixed-center", action="store_true", default=None,
                   dest="fixed_center",
                   help="place every spot at its window center")
    p.add_argument("--stride", type=int)
    p.add_argument("--predictions",
                   help="evaluate this predictions file instead of running inference")
    p.add_argument("--num-classes", type=int, dest="num_classes")

    p = sub.add_parser("infer", help="write spot predictions for a split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="predictions file to write")
    p.add_argument("--split")
    p.add_argument("--stride", type=int)
    p.add_argument("--fixed-center", action="store_true", default=None,
                   dest="fixed_center")
    p.add_argument("--vote-density", dest="vote_density",
                   help="also write per-frame stride-1 vote counts (CSV) here")

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    common(p)
    p.add_argument("--bits", type=int, choices=(32, 64))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--inject-error", action="store_true", default=None,
                   dest="inject_error",
                   help="self-test hook: corrupt one gradient and expect failure")

    return parser


def resolve_options(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit CLI flags; unknown file keys rejected."""
    resolved = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {config_path}: {exc}")
        if not isinstance(file_cfg, dict):
            raise UsageError(f"config file {config_path} must hold a JSON object")
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def parse_delta_grid(text: str) -> list[float]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad delta grid {text!r}, expected start:stop:step")
        start, stop, step = (float(x) for x in parts)
        if step <= 0 or stop < start:
            raise UsageError(f"bad delta grid {text!r}")
        grid = []
        v = start
        while v <= stop + 1e-9:
            grid.append(round(v, 9))
            v += step
        return grid
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad delta grid {text!r}: {exc}")


def _cap_threads(n: int) -> None:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def _echo(command: str, resolved: dict, extra: dict | None = None) -> None:
    doc = {"command": command, **resolved}
    if extra:
        doc.update(extra)
    print("config " + json.dumps(doc, sort_keys=True, default=str), flush=True)


def cmd_synth(args) -> int:
    opts = resolve_options(args, SYNTH_DEFAULTS)
    _cap_threads(opts["threads"])
    _echo("synth", opts, {"out": args.out})

    from .errors import DataError
    from .io import save_match
    from .synth import SynthSpec, signature_bank, synth_generate
    from .utils import substream

    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not opts["force"]:
        raise DataError(f"{out} exists and is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)

    counts = {
        "train": opts["train_matches"],
        "val": opts["val_matches"],
        "test": opts["test_matches"],
    }
    base = SynthSpec(
        num_matches=1,
        match_minutes=opts["match_minutes"],
        feature_dim=opts["feature_dim"],
        feature_rate=opts["feature_rate"],
        num_classes=opts["num_classes"],
        event_spacing_s=opts["event_spacing"],
        signature_strength=opts["signature_strength"],
        signature_horizon=opts["signature_horizon"],
        pre_cue_strength=opts["pre_cue_strength"],
        noise_scale=opts["noise_scale"],
    )
    from dataclasses import replace

    bank = signature_bank(base, substream(opts["seed"], "synth-bank"))
    manifest = {"seed": opts["seed"], "spec": opts, "splits": {}}
    for i, (split, count) in enumerate(counts.items()):
        spec = replace(base, num_matches=count)
        scale = 1.0
        if opts["pre_cue_train_only"] and split != "train":
            scale = 0.0
        matches = synth_generate(
            spec, substream(opts["seed"], "synth", i), bank=bank,
            pre_cue_scale=scale, id_prefix=f"{split}_",
        )
        split_dir = out / split
        for match in matches:
            save_match(split_dir, match, spec.num_classes)
        manifest["splits"][split] = [m.match_id for m in matches]
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {sum(counts.values())} matches under {out}")
    return 0


def cmd_train(args) -> int:
    opts = resolve_options(args, TRAIN_DEFAULTS)
    _cap_threads(opts["threads"])
    _echo("train", opts, {"data": args.data, "out": args.out})

    from .data import MaskPolicy
    from .io import load_split
    from .model import SpotterConfig, save_checkpoint
    from .train import TrainPlan, fit, jsonl_logger

    data = Path(args.data)
    train_matches = load_split(data / "train", opts["num_classes"])
    val_dir = data / "val"
    val_matches = load_split(val_dir, opts["num_classes"]) if val_dir.exists() else None

    feature_dim = opts["feature_dim"] or train_matches[0].features.shape[1]
    config = SpotterConfig(
        feature_dim=feature_dim,
        clip_len=opts["clip_len"],
        num_classes=opts["num_classes"],
        kernel_size=opts["kernel_size"],
        dropout_rate=opts["dropout"],
        regression_weight=opts["lam"],
    )
    plan = TrainPlan(
        max_epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        base_lr=opts["lr"],
        momentum=opts["momentum"],
        weight_decay=opts["weight_decay"],
        patience=opts["patience"],
        n_foreground=opts["n_foreground"],
    )
    policy = None if opts["no_mask"] else MaskPolicy(
        p=opts["mask_p"], q=opts["mask_q"], side=opts["mask_side"]
    )
    deltas = parse_delta_grid(opts["delta_grid"])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "metrics.jsonl"
    log_path.unlink(missing_ok=True)
    log = jsonl_logger(log_path)

    def log_and_print(record):
        log(record)
        vm = record["val_average_map"]
        vm_text = "n/a" if vm is None else f"{vm:.4f}"
        print(f"epoch {record['epoch']:3d}  loss {record['train_loss']:.4f}  "
              f"cls {record['train_cls_loss']:.4f}  regr {record['train_regr_loss']:.4f}  "
              f"lr {record['lr_final']:.5f}  val avg-mAP {vm_text}", flush=True)

    result = fit(
        train_matches, config, plan, policy=policy, val_matches=val_matches,
        seed=opts["seed"], deltas=deltas, log_fn=log_and_print,
        drop_halftime_subs_window=opts["halftime_window"],
    )
    ckpt = out / "checkpoint.rmsn"
    save_checkpoint(ckpt, config, result.params)
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        json.dump({"resolved": opts, "best_epoch": result.best_epoch,
                   "stopped_epoch": result.stopped_epoch}, fh, indent=1, sort_keys=True,
                  default=str)
        fh.write("\n")
    best = max(result.val_history) if result.val_history else None
    print(f"saved {ckpt} (best epoch {result.best_epoch}"
          + (f", val avg-mAP {best:.4f})" if best is not None else ")"))
    return 0


def _load_model(path):
    from .model import load_checkpoint

    return load_checkpoint(path)


def cmd_eval(args) -> int:
    opts = resolve_options(args, EVAL_DEFAULTS)
    _cap_threads(opts["threads"])
    _echo("eval", opts, {"checkpoint": args.checkpoint, "data": args.data,
                         "out": args.out})

    from .evaluate import average_map, export_curves, ground_truth_from_matches
    from .infer import read_predictions, spot_matches, write_predictions
    from .io import load_split
    from .model import class_names

    config, params = _load_model(args.checkpoint)
    split_dir = Path(args.data) / opts["split"]
    if not split_dir.exists():
        split_dir = Path(args.data)
    matches = load_split(split_dir, config.num_classes)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if opts["predictions"]:
        preds = read_predictions(opts["predictions"], config.num_classes)
    else:
        preds = spot_matches(
            params, config, matches, stride=opts["stride"],
            fixed_center=bool(opts["fixed_center"]),
        )
        write_predictions(out / "predictions.jsonl", preds, matches)

    deltas = parse_delta_grid(opts["delta_grid"])
    report = average_map(
        preds, ground_truth_from_matches(matches), deltas, config.num_classes
    )
    paths = export_curves(report, out, class_names(config.num_classes))
    print(f"average_map {report.average_map:.6f}")
    print(f"wrote {paths['summary']}")
    return 0


def cmd_infer(args) -> int:
    opts = resolve_options(args, INFER_DEFAULTS)
    _cap_threads(opts["threads"])
    _echo("infer", opts, {"checkpoint": args.checkpoint, "data": args.data,
                          "out": args.out})

    from .infer import spot_matches, vote_density, write_predictions
    from .io import load_split

    config, params = _load_model(args.checkpoint)
    split_dir = Path(args.data) / opts["split"]
    if not split_dir.exists():
        split_dir = Path(args.data)
    matches = load_split(split_dir, config.num_classes)

    preds = spot_matches(params, config, matches, stride=opts["stride"],
                         fixed_center=bool(opts["fixed_center"]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, preds, matches)
    print(f"wrote {len(preds)} predictions to {out}")

    if opts["vote_density"]:
        dens_path = Path(opts["vote_density"])
        dens_path.parent.mkdir(parents=True, exist_ok=True)
        with open(dens_path, "w", encoding="utf-8") as fh:
            fh.write("match_id,frame,votes\n")
            for match in matches:
                density = vote_density(params, config, match)
                for frame, votes in enumerate(density.counts):
                    if votes:
                        fh.write(f"{match.match_id},{frame},{int(votes)}\n")
        print(f"wrote vote density to {dens_path}")
    return 0


def cmd_gradcheck(args) -> int:
    opts = resolve_options(args, GRADCHECK_DEFAULTS)
    _cap_threads(opts["threads"])
    _echo("gradcheck", opts)

    import numpy as np

    from .gradcheck import run_all

    dtype = np.float64 if opts["bits"] == 64 else np.float32
    reports = run_all(
        dtype, epsilon=opts["epsilon"], tolerance=opts["tolerance"],
        seed=opts["seed"], inject_error=bool(opts["inject_error"]),
    )
    ok = True
    for section, report in reports:
        for line in report.lines():
            print(f"{section:14s} {line}")
        ok = ok and report.passed
    print(f"gradcheck {'PASSED' if ok else 'FAILED'} "
          f"({opts['bits']}-bit, tolerance {reports[0][1].tolerance:g})")
    return 0 if ok else 3


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "synth": cmd_synth,
            "train": cmd_train,
            "eval": cmd_eval,
            "infer": cmd_infer,
            "gradcheck": cmd_gradcheck,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # map package errors onto exit codes
        from .errors import ConfigError, DataError, DimensionError, NumericError

        if isinstance(exc, ConfigError):
            print(f"configuration error: {exc}", file=sys.stderr)
            return 1
        if isinstance(exc, (DataError, DimensionError, OSError)):
            print(f"data error: {exc}", file=sys.stderr)
            return 2
        if isinstance(exc, NumericError):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return 3
        raise


if __name__ == "__main__":
    sys.exit(main())

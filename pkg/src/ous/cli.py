"""Command-line entry point (`python3 -m ous <command>` or `ous <command>`).

Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 numeric abort,
5 checkpoint mismatch, 6 gradient check failure.
"""

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_CHECKPOINT = 5
EXIT_GRADCHECK = 6


class _Exit(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load_config(path):
    from .config import RunConfig
    from .errors import ConfigError

    try:
        return RunConfig.load(path)
    except ConfigError as exc:
        raise _Exit(EXIT_CONFIG, f"config error: {exc}") from None
    except OSError as exc:
        raise _Exit(EXIT_CONFIG, f"cannot read config: {exc}") from None


def _load_manifest(data_dir):
    from .data import Manifest

    try:
        return Manifest.load(data_dir)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise _Exit(EXIT_IO, f"cannot read corpus in {data_dir}: {exc}") from None


def cmd_gen_data(args):
    from .data import generate_corpus

    cfg = _load_config(args.config)
    data = cfg.data
    if args.seed is not None:
        data = cfg.replace(data={"seed": args.seed}).data
    try:
        manifest = generate_corpus(data, args.out)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot write corpus: {exc}") from None
    print(f"wrote {len(manifest.clips)} clips to {args.out}")
    return EXIT_OK


def cmd_train(args):
    from .errors import TrainingAborted
    from .train import train

    cfg = _load_config(args.config)
    manifest = _load_manifest(args.data)
    try:
        result = train(cfg, args.data, args.out, manifest=manifest)
    except TrainingAborted as exc:
        raise _Exit(EXIT_NUMERIC, f"training aborted: {exc}") from None
    except OSError as exc:
        raise _Exit(EXIT_IO, f"I/O error during training: {exc}") from None
    best = result.best_record
    print(
        f"{len(result.epochs)} epochs ({result.stop_reason}); best epoch {best['epoch']} "
        f"val_loss {best['val_loss']:.4f} UAR {best['val_UAR']:.4f} WAR {best['val_WAR']:.4f}"
    )
    return EXIT_OK


def _report_paths(report):
    stem = report[:-5] if report.endswith(".json") else report
    return stem + ".confusion.csv", stem + ".clusters.json"


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .config import RunConfig
    from .data import EMOTIONS, write_clip
    from .errors import CheckpointMismatch, ConfigError, FormatError
    from .evaluation import cluster_report, write_metrics_report
    from .model import OUSModel
    from .train import evaluate, frozen_features

    try:
        params, trailer = load_checkpoint(args.checkpoint)
        cfg = RunConfig.from_dict(trailer["config"])
        model = OUSModel(cfg)
        model.load_state_dict(params)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read checkpoint: {exc}") from None
    except (FormatError, CheckpointMismatch, ConfigError, KeyError, TypeError) as exc:
        raise _Exit(EXIT_CHECKPOINT, f"checkpoint mismatch: {exc}") from None

    manifest = _load_manifest(args.data)
    records = manifest.split("val")
    if not records:
        raise _Exit(EXIT_IO, f"no validation split in {args.data}")
    try:
        features = frozen_features(model, args.data, records)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read clips: {exc}") from None
    ev = evaluate(model, features, records)
    labels = np.array([r.emotion for r in records])
    clusters = cluster_report(ev.taps, labels)

    confusion_path, cluster_path = _report_paths(args.report)
    os.makedirs(os.path.dirname(os.path.abspath(args.report)), exist_ok=True)
    write_metrics_report(args.report, ev.report, clusters, EMOTIONS)
    with open(confusion_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred", *EMOTIONS])
        for name, row in zip(EMOTIONS, ev.report.confusion):
            writer.writerow([name, *row])
    with open(cluster_path, "w", encoding="utf-8") as fh:
        json.dump(clusters, fh, indent=2, sort_keys=True)
    if args.dump_features:
        os.makedirs(args.dump_features, exist_ok=True)
        for name, values in ev.taps.items():
            # one-frame, one-channel container: H = clips, W = feature width
            write_clip(os.path.join(args.dump_features, f"{name}.ousc"), np.asarray(values)[None, None])
    print(f"UAR {ev.report.UAR:.4f} WAR {ev.report.WAR:.4f}")
    return EXIT_OK


def _parse_seeds(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise _Exit(EXIT_CONFIG, f"--seeds must be a comma-separated list of integers, got {text!r}") from None
    if not seeds:
        raise _Exit(EXIT_CONFIG, "--seeds is empty")
    return seeds


def cmd_ablate(args):
    from .errors import ConfigError
    from .evaluation import AblationGrid, ablate

    cfg = _load_config(args.config)
    seeds = _parse_seeds(args.seeds)
    try:
        grid = AblationGrid.load(args.grid)
    except ConfigError as exc:
        raise _Exit(EXIT_CONFIG, f"grid error: {exc}") from None
    except OSError as exc:
        raise _Exit(EXIT_CONFIG, f"cannot read grid: {exc}") from None
    _load_manifest(args.data)
    try:
        rows = ablate(grid, cfg, args.data, args.out, seeds)
    except ConfigError as exc:
        raise _Exit(EXIT_CONFIG, f"grid cell rejected: {exc}") from None
    except OSError as exc:
        raise _Exit(EXIT_IO, f"I/O error during ablation: {exc}") from None
    failed = sum(1 for r in rows if r["status"] != "ok")
    print(f"{len(rows)} rows written to {os.path.join(args.out, 'results.csv')} ({failed} failed)")
    return EXIT_OK


def cmd_gradcheck(args):
    from . import autograd as ag
    from .gradcheck import SUITES

    dtype = np.dtype(args.dtype)
    if dtype == np.float32:
        warnings.warn("float32 gradient checks are informational; tolerances are not guaranteed", stacklevel=1)
    with ag.default_dtype(dtype):
        results = SUITES[args.scope]()
    failed = 0
    for name, err, tol in results:
        ok = err < tol
        failed += not ok
        print(f"{name:<24} {err:.3e}  (tol {tol:.0e})  {'ok' if ok else 'FAIL'}")
    if dtype == np.float32:
        return EXIT_OK
    return EXIT_GRADCHECK if failed else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="ous", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic clip corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the validation split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--dump-features", metavar="DIR", help="also write tap features as clip containers")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train every cell of an ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--scope", choices=("op", "module", "full"), default="op")
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _Exit as exc:
        print(f"ous {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

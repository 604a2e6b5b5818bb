"""Command-line entry point: simulate -> train -> evaluate -> report.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .dataset import DatasetManifest, build_dataset
from .evaluate import evaluate_dataset, parse_methods, read_results_csv, summaries_to_csv
from .report import write_report
from .unet import PUBLISHED_PARAMETER_COUNT, ModelFileError, UNetModel, load_model, save_model, train


EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "lr")


class UsageError(Exception):
    pass


def _config(path, seed) -> RunConfig:
    cfg = load_config(path) if path else RunConfig()
    return cfg.with_seed(seed) if seed is not None else cfg


def _dir_bytes(root: Path) -> int:
    return sum(p.stat().st_size for p in root.rglob("*") if p.is_file())


def cmd_simulate(args) -> int:
    cfg = _config(args.config, args.seed)
    t0 = time.perf_counter()
    root = Path(args.out)
    manifest = build_dataset(cfg, root)
    frames = sum(len(r["frame_indices"]) for r in manifest.test)
    print(f"simulated {len(manifest.train)} training examples and {frames} test frames "
          f"({len(manifest.skipped)} skipped) in {root}: {_dir_bytes(root)} bytes, "
          f"{time.perf_counter() - t0:.1f} s")
    return EXIT_OK


def write_history(path: Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for h in history:
            w.writerow([h["epoch"], f"{h['train_loss']:.6g}", f"{h['val_loss']:.6g}", f"{h['lr']:.6g}"])


def history_path(model_path: Path) -> Path:
    return model_path.with_name(model_path.stem + "_history.csv")


def cmd_train(args) -> int:
    manifest = DatasetManifest.load(args.dataset)
    cfg = _config(args.config, args.seed) if args.config or args.seed is not None \
        else manifest.run_config()
    if not manifest.train:
        raise RuntimeError(f"dataset {args.dataset} has no training examples")
    x, y = manifest.train_arrays()
    model = UNetModel.create(cfg.architecture, cfg.train.seed)
    print(f"trainable parameters: {model.parameter_count()} "
          f"(published figure: {PUBLISHED_PARAMETER_COUNT}; architecture {cfg.architecture})")
    t0 = time.perf_counter()
    best, history = train(model, x, y, cfg.train)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(best, out)
    write_history(history_path(out), history)
    print(f"trained on {len(x)} examples for {len(history)} epochs in "
          f"{time.perf_counter() - t0:.1f} s; best val loss "
          f"{min(h['val_loss'] for h in history):.6g}; model {out}")
    return EXIT_OK


def expected_counts(manifest: DatasetManifest) -> dict:
    counts: dict = {}
    for rec in manifest.test:
        key = (rec["room"], float(rec["t60"]), rec["snr_db"])
        counts[key] = counts.get(key, 0) + len(rec["frame_indices"])
    return counts


def cmd_evaluate(args) -> int:
    try:
        methods = parse_methods(args.methods)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if "cnn" in methods and not args.model:
        raise UsageError("method cnn requires --model")
    manifest = DatasetManifest.load(args.dataset)
    model = load_model(args.model) if "cnn" in methods else None
    t0 = time.perf_counter()
    summaries = evaluate_dataset(manifest, methods, model)
    expect = expected_counts(manifest)
    for (room, t60, snr, method), s in summaries.items():
        if s.count_total != expect[(room, t60, snr)]:
            raise RuntimeError(f"cell {room}/{t60}/{snr}/{method}: {s.count_total} estimates, "
                               f"expected {expect[(room, t60, snr)]}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(summaries_to_csv(summaries))
    provenance = {"config_digest": json.loads(manifest.to_json())["config_digest"],
                  "seed": manifest.config["experiment"]["seed"], "version": f"fsgcc-tde {__version__}",
                  "methods": list(methods), "model": args.model,
                  "wall_clock_s": round(time.perf_counter() - t0, 3),
                  "cells": len(summaries)}
    out.with_suffix(".json").write_text(json.dumps(provenance, indent=1, sort_keys=True) + "\n")
    print(f"evaluated {len(summaries)} cells -> {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        text = Path(args.csv).read_text()
    except OSError as exc:
        raise RuntimeError(f"cannot read {args.csv}: {exc.strerror}") from None
    rows = read_results_csv(text)
    written = write_report(rows, args.out)
    print(f"wrote {len(written)} plot(s) to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fsgcc-tde", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--version", action="version", version=f"fsgcc-tde {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate training pairs and test frames")
    s.add_argument("--config", help="JSON run configuration (defaults if omitted)")
    s.add_argument("--seed", type=int, help="override every seed in the configuration")
    s.add_argument("--out", required=True, help="dataset directory")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train the U-Net denoiser on a dataset")
    t.add_argument("dataset", help="dataset directory")
    t.add_argument("--config", help="JSON run configuration (default: the dataset's own)")
    t.add_argument("--seed", type=int, help="override the training seed")
    t.add_argument("--out", required=True, help="model file; history goes next to it")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="run the TDoA methods over the test sweep")
    e.add_argument("dataset", help="dataset directory")
    e.add_argument("--methods", default="all", help="comma list from gcc,svd,wsvd,cnn (default all)")
    e.add_argument("--model", help="trained model file (needed for cnn)")
    e.add_argument("--out", required=True, help="results CSV")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="plot a results CSV as SVG charts")
    r.add_argument("csv", help="results CSV from evaluate")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, ModelFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

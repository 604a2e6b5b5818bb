"""Desk-scale sweep: simulate, train, evaluate and plot through the CLI,
then print the per-cell method orderings.

    python3 scripts/run_desk.py --work runs/desk
    python3 scripts/run_desk.py --config scripts/configs/smoke.json --work runs/smoke
"""

import argparse
import sys
import time
from pathlib import Path

from fsgcc_tde.cli import main as cli
from fsgcc_tde.evaluate import ordering_checks, read_results_csv

HERE = Path(__file__).resolve().parent


def run(config, work: Path, seed=None, reuse=False) -> Path:
    """Run the four CLI stages into ``work``; returns the results CSV path."""
    work.mkdir(parents=True, exist_ok=True)
    data, model, results = work / "data", work / "model.bin", work / "results.csv"
    seed_args = ["--seed", str(seed)] if seed is not None else []
    stages = [
        (data / "manifest.json", ["simulate", "--config", str(config), "--out", str(data)] + seed_args),
        (model, ["train", str(data), "--out", str(model)]),
        (results, ["evaluate", str(data), "--model", str(model), "--out", str(results)]),
        (None, ["report", str(results), "--out", str(work / "plots")]),
    ]
    for product, argv in stages:
        if reuse and product is not None and product.exists():
            print(f"[skip] {argv[0]}: {product} exists")
            continue
        t0 = time.perf_counter()
        code = cli(argv)
        if code:
            raise SystemExit(f"{argv[0]} failed with exit code {code}")
        print(f"[{argv[0]}] {time.perf_counter() - t0:.1f} s")
    return results


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(HERE / "configs" / "desk.json"))
    p.add_argument("--work", default="runs/desk")
    p.add_argument("--seed", type=int)
    p.add_argument("--reuse", action="store_true", help="skip stages whose output already exists")
    args = p.parse_args(argv)
    t0 = time.perf_counter()
    results = run(args.config, Path(args.work), args.seed, args.reuse)
    rows = read_results_csv(results.read_text())
    checks = ordering_checks(rows)
    for c in checks:
        print(c.line())
    anechoic = [r for r in rows if r["t60"] == 0]
    for r in anechoic:
        print(f"anechoic {r['room']} {r['method']}: P = {r['P_pct']:g}%")
    print(f"{sum(c.ok for c in checks)}/{len(checks)} orderings hold; "
          f"pipeline {time.perf_counter() - t0:.0f} s")
    return 0


if __name__ == "__main__":
    sys.exit(main())

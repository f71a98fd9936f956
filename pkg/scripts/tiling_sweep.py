#!/usr/bin/env python3
"""Tiling comparison on rotated synthetic coins.

Generates a synthetic dataset, runs the vocabulary-size x feature-budget sweep
for all four tilings, and writes the per-configuration table, the
mean-over-budgets table and an SVG chart of the means.

    python scripts/tiling_sweep.py --out runs/tiling_sweep            # quick grid (about 1 min)
    python scripts/tiling_sweep.py --out runs/tiling_sweep --full     # full 7 x 7 grid (long)
"""

import argparse
import logging
import math
import time
from pathlib import Path

from coinbow.experiment import (
    FULL_FEATURE_BUDGETS,
    FULL_VOCAB_SIZES,
    ExperimentConfig,
    mean_over_features,
    sweep,
    write_means_csv,
    write_results_csv,
    write_svg,
)
from coinbow.synth import generate_synthetic_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path("runs/tiling_sweep"))
    ap.add_argument("--per-class", type=int, default=60)
    ap.add_argument("--rotation", type=float, default=math.pi, help="rotation range in radians")
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0, help="master seed of the sweep")
    ap.add_argument("--full", action="store_true", help="use the full vocabulary and budget grids")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    data = args.out / "data"
    manifest = generate_synthetic_dataset(data, args.per_class, args.rotation, args.noise, args.data_seed)
    if args.full:
        cfg = ExperimentConfig(vocab_sizes=FULL_VOCAB_SIZES, feature_budgets=FULL_FEATURE_BUDGETS, master_seed=args.seed)
    else:
        cfg = ExperimentConfig(vocab_sizes=(10, 20, 50, 100), feature_budgets=(500, 1000), master_seed=args.seed)

    t0 = time.perf_counter()
    table = sweep(manifest, cfg)
    means = mean_over_features(table)
    write_results_csv(table, args.out / "results.csv")
    write_means_csv(means, args.out / "means.csv")
    write_svg(means, args.out / "means.svg")

    vocabs = sorted({v for _, v, _ in means})
    print(f"\nmean accuracy over feature budgets ({time.perf_counter() - t0:.0f}s)")
    print(f"{'tiling':12s}" + "".join(f"{v:>8d}" for v in vocabs))
    for t in dict.fromkeys(t for t, _, _ in means):
        print(f"{t:12s}" + "".join(f"{a:8.3f}" for tt, _, a in means if tt == t))
    print(f"\nwrote {args.out / 'results.csv'}, {args.out / 'means.csv'}, {args.out / 'means.svg'}")


if __name__ == "__main__":
    main()

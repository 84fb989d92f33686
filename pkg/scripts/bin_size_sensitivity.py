#!/usr/bin/env python3
"""Mean neighbour p90 error per bin width over seeded smooth reference sets."""

import argparse

import numpy as np

from minos import fixtures
from minos.predict import DEFAULT_CANDIDATES, bin_size_errors


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=6)
    ap.add_argument("--workloads", type=int, default=12)
    ap.add_argument("--spread", type=float, default=0.12, help="std of each spike distribution (x TDP)")
    ap.add_argument("--widths", type=float, nargs="+", default=list(DEFAULT_CANDIDATES))
    args = ap.parse_args()

    ref = 0.1 if 0.1 in args.widths else args.widths[0]
    table = []
    for seed in range(args.seeds):
        errs = bin_size_errors(fixtures.smooth_set(seed, args.workloads, args.spread), args.widths)
        table.append([errs[c] / errs[ref] for c in args.widths])
        print(f"seed {seed}: " + " ".join(f"{c:g}={errs[c]:.4f}" for c in args.widths))
    norm = np.mean(table, axis=0)
    print(f"normalized to c={ref:g}: " + " ".join(f"{c:g}={v:.3f}" for c, v in zip(args.widths, norm)))


if __name__ == "__main__":
    main()

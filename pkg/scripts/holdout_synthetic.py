#!/usr/bin/env python3
"""Hold-one-out evaluation on the synthetic reference sets, with the mean-power baseline alongside."""

import argparse

from minos import fixtures
from minos.predict import holdout_evaluate
from minos.refset import refset_add


def refsets():
    rs, tgt = fixtures.baseline_separation_set()
    return {
        "perfect": fixtures.perfect_neighbor_set(),
        "isolated": fixtures.perfect_neighbor_set(isolate=True),
        "baseline": refset_add(rs, "new-bursty", tgt),
        "catalog": fixtures.catalog_18(),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--objective", choices=["power", "perf"], default="power")
    ap.add_argument("--rows", action="store_true", help="print one line per held-out workload")
    args = ap.parse_args()

    print(f"{'refset':<10} {'n':>3} {'minos':>8} {'baseline':>9} {'fallback':>8}")
    for name, rs in refsets().items():
        rep = holdout_evaluate(rs, args.objective)
        print(f"{name:<10} {len(rep.rows):>3} {rep.mean_abs_error:>8.3f} "
              f"{rep.baseline_mean_abs_error:>9.3f} {rep.n_fallback:>8}")
        if args.rows:
            for r in rep.rows:
                print(f"    {r.workload:<14} nn={r.neighbor:<14} d={r.distance:.4f} "
                      f"cap={r.chosen_freq:g} err={r.error:+.3f}")


if __name__ == "__main__":
    main()

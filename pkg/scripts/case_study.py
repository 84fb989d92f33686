#!/usr/bin/env python3
"""Recommend caps for the two case-study targets and report the per-target outcome."""

import argparse
import json

from minos import fixtures
from minos.cluster import cosine_distance
from minos.predict import Bounds, prediction_error_power, profiling_savings, select_optimal_freq


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--power-bound", type=float, default=1.3)
    ap.add_argument("--perf-bound", type=float, default=5.0)
    ap.add_argument("--bin-width", type=float, default=None, help="fixed width; default picks one")
    args = ap.parse_args()

    rs, targets = fixtures.case_study()
    bounds = Bounds(args.power_bound, args.perf_bound)
    out = {}
    for name, rec in targets.items():
        power = select_optimal_freq(rec.features, rs, "power", bounds, args.bin_width)
        perf = select_optimal_freq(rec.features, rs, "perf", bounds)
        nb = power.neighbor.neighbor
        width = power.bin_width or 0.1
        out[name] = {
            "power_neighbor": nb,
            "cosine_distance": cosine_distance(rec.features.spike_vector(width),
                                               rs[nb].features.spike_vector(width)),
            "power_cap_mhz": power.chosen_freq,
            "observed_p90_error_pct": prediction_error_power(
                rec.profile.percentile_at(power.chosen_freq, 90), args.power_bound),
            "perf_neighbor": perf.neighbor.neighbor,
            "perf_cap_mhz": perf.chosen_freq,
            "profiling_savings_pct": profiling_savings(rec.profile.profiling_times,
                                                       rec.profile.uncapped_freq),
        }
    print(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()

"""Constructed reference sets with known answers.

The case-study set reproduces a published nearest-neighbour table: spike
vectors are built so that the cosine distances at bin width 0.1 come out at the
listed values, utilization points sit at the listed Euclidean distances, and
scaling curves cross the bounds at the listed frequencies. None of it is
measured data.
"""

from __future__ import annotations

import math

import numpy as np

from .features import UtilizationPoint
from .refset import ProfileEntry, ReferenceSet, ScalingProfile, WorkloadRecord, record_id
from .synth import ScalingSpec, features_from_magnitudes, smooth_magnitudes, synth_profile

CASE_GRID = tuple(float(f) for f in range(1300, 2101, 100))
CASE_TDP = 750.0
_C = 0.1


def _bin_value(j: int) -> float:
    # centre of bin j at width 0.1
    return round(0.55 + _C * j, 4)


def _magnitudes(counts: dict[int, int]) -> np.ndarray:
    return np.concatenate([np.full(n, _bin_value(j)) for j, n in sorted(counts.items())])


def _tilt(base: dict[int, int], extra_bin: int, cos_target: float, scale: int = 1000) -> dict[int, int]:
    """Scale ``base`` and add mass in a disjoint bin so cos(result, base) = cos_target."""
    norm = math.sqrt(sum(v * v for v in base.values()))
    m = norm * scale * math.sqrt(1.0 - cos_target**2) / cos_target
    out = {j: v * scale for j, v in base.items()}
    out[extra_bin] = int(round(m))
    return out


def _curve_profile(name: str, p90: dict[float, float], deg_slope: float,
                   runtime: float = 100.0) -> ScalingProfile:
    """Profile on the case grid; degradation linear in (f_max - f)."""
    fmax = CASE_GRID[-1]
    entries, times = [], {}
    for f in CASE_GRID:
        d = deg_slope * (fmax - f) / 100.0
        entries.append(ProfileEntry(f, p90[f], p90[f] + 0.03, p90[f] + 0.06, d))
        times[f] = runtime * (1.0 + d / 100.0)
    return ScalingProfile(name, tuple(entries), fmax, runtime, times)


def _p90_crossing(cross: float, below: float = 1.25, above_start: float = 1.32,
                  step: float = 0.03) -> dict[float, float]:
    """p90 < 1.3 at and under ``cross``; >= 1.3 above it, rising with f."""
    out = {}
    for f in CASE_GRID:
        if f <= cross:
            out[f] = below - 0.01 * (cross - f) / 100.0
        else:
            out[f] = above_start + step * (f - cross - 100.0) / 100.0
    return out


SDXL = {6: 3, 7: 4, 8: 3}
MILC = {3: 2, 4: 5, 5: 3}
DEEPMD = {0: 5, 1: 3, 2: 2}
LAMMPS = {13: 4, 14: 6}
RESNET = {11: 5, 12: 5}


def case_study() -> tuple[ReferenceSet, dict[str, WorkloadRecord]]:
    """Reference set plus the two never-seen targets, each with its own
    (normally unknown) scaling profile for scoring the prediction."""
    util = {
        "SD-XL": UtilizationPoint(60.0, 30.0),
        "FAISS": UtilizationPoint(67.18, 30.0),
        "DeePMD-Water": UtilizationPoint(40.0, 50.0),
        "Qwen1.5-MoE": UtilizationPoint(40.0, 63.64),
        "MILC-24": UtilizationPoint(20.0, 80.0),
        "LAMMPS": UtilizationPoint(85.0, 10.0),
        "ResNet50": UtilizationPoint(75.0, 55.0),
        "PageRank": UtilizationPoint(10.0, 95.0),
    }
    spikes = {
        "SD-XL": _magnitudes({j: 1000 * n for j, n in SDXL.items()}),
        "FAISS": _magnitudes(_tilt(SDXL, 9, 0.95)),
        "MILC-24": _magnitudes({j: 1000 * n for j, n in MILC.items()}),
        "Qwen1.5-MoE": _magnitudes(_tilt(MILC, 10, 0.99)),
        "DeePMD-Water": _magnitudes({j: 1000 * n for j, n in DEEPMD.items()}),
        "LAMMPS": _magnitudes({j: 1000 * n for j, n in LAMMPS.items()}),
        "ResNet50": _magnitudes({j: 1000 * n for j, n in RESNET.items()}),
        "PageRank": np.array([]),
    }
    below = {"PageRank": np.full(2000, 0.35)}
    profiles = {
        "SD-XL": _curve_profile("SD-XL", _p90_crossing(1300.0), 6.0),
        "MILC-24": _curve_profile("MILC-24", _p90_crossing(1500.0), 1.5),
        "DeePMD-Water": _curve_profile("DeePMD-Water", _p90_crossing(2100.0, below=0.8), 2.0),
        "LAMMPS": _curve_profile("LAMMPS", _p90_crossing(1700.0), 3.0),
        "ResNet50": _curve_profile("ResNet50", _p90_crossing(1900.0), 4.0),
        "PageRank": _curve_profile("PageRank", _p90_crossing(2100.0, below=0.4), 0.5),
        # the targets' own curves: FAISS stays under the bound at SD-XL's cap,
        # Qwen overshoots MILC's cap by 5% of the bound
        "FAISS": _curve_profile("FAISS", {**_p90_crossing(1300.0)}, 100.0 / 36.0),
        "Qwen1.5-MoE": _curve_profile(
            "Qwen1.5-MoE", {**_p90_crossing(1300.0), 1500.0: 1.365}, 0.25 / 0.99),
    }
    records = {}
    for name, mags in spikes.items():
        feats = features_from_magnitudes(name, mags, utilization=util[name],
                                         below=below.get(name, ()), tdp=CASE_TDP)
        records[name] = WorkloadRecord(feats, profiles[name])
    targets = {k: records.pop(k) for k in ("FAISS", "Qwen1.5-MoE")}
    return ReferenceSet(CASE_TDP, records), targets


def catalog_18() -> ReferenceSet:
    """18 configurations of 11 applications; multi-config apps flag their largest input."""
    configs = {
        "PageRank": [("indochina", True), ("att", False)],
        "LULESH": [("n300", False), ("n500", True)],
        "LSMS": [("FePt", False)],
        "LAMMPS": [("8x8x16", False), ("16x16x16", True)],
        "MILC": [("24", True), ("6", False)],
        "M-PSDNS": [("990", False)],
        "LLaMA2-train": [("bsz32", False), ("bsz64", True)],
        "LLaMA2-infer": [("bsz32", True), ("bsz8", False)],
        "LLaMA3-infer": [("bsz32", False)],
        "SD-XL": [("res2k", True), ("res512", False)],
        "GNN": [("igbh-tiny", False)],
    }
    rng = np.random.default_rng(18)
    records = {}
    for i, (app, cfgs) in enumerate(sorted(configs.items())):
        for cfg, largest in cfgs:
            mags = smooth_magnitudes(rng, 0.7 + 0.1 * i, 0.05, 500)
            feats = features_from_magnitudes(app, mags, cfg,
                                             UtilizationPoint(*rng.uniform(5, 95, 2)))
            prof = synth_profile(ScalingSpec(1300.0 + 200.0 * (i % 5), 1.0 + i % 3), f"{app}/{cfg}")
            records[record_id(feats)] = WorkloadRecord(feats, prof, largest)
    return ReferenceSet(750.0, records)


# --- hold-one-out sets ------------------------------------------------------

_GROUP_BINS = [
    {1: 6, 2: 3, 3: 1},
    {4: 2, 5: 5, 6: 3},
    {7: 3, 8: 5, 9: 2},
    {10: 4, 11: 4, 12: 2},
    {12: 1, 13: 4, 14: 5},
]
_GROUP_SIZES = [2, 2, 2, 2, 3]
_GROUP_CROSSING = [1500.0, 1700.0, 1900.0, 2100.0, 1300.0]
_GROUP_SLOPE = [1.0, 2.0, 3.0, 4.0, 0.5]
_GROUP_UTIL = [(15.0, 80.0), (40.0, 60.0), (65.0, 40.0), (90.0, 20.0), (50.0, 95.0)]


def perfect_neighbor_set(isolate: bool = False) -> ReferenceSet:
    """11 workloads in five groups; group members share one scaling curve and
    have near-identical spike vectors and utilization.

    With ``isolate`` the last member of the last group gets a spike vector far
    from everything else while keeping its group's curve.
    """
    records = {}
    for g, (bins, size) in enumerate(zip(_GROUP_BINS, _GROUP_SIZES)):
        prof = synth_profile(ScalingSpec(_GROUP_CROSSING[g], _GROUP_SLOPE[g], grid=CASE_GRID))
        for m in range(size):
            counts = {j: 100 * n for j, n in bins.items()}
            low = min(bins)
            counts[low] += 3 * m  # small perturbation below the group's p90
            name = f"g{g}w{m}"
            if isolate and g == len(_GROUP_BINS) - 1 and m == size - 1:
                counts = {0: 500, 2: 500}
            ux, uy = _GROUP_UTIL[g]
            feats = features_from_magnitudes(name, _magnitudes(counts),
                                             utilization=UtilizationPoint(ux + 0.5 * m, uy - 0.3 * m))
            records[name] = WorkloadRecord(
                feats, ScalingProfile(name, prof.entries, prof.uncapped_freq,
                                      prof.uncapped_runtime, prof.profiling_times))
    return ReferenceSet(750.0, records)


def identical_set(n: int = 4) -> ReferenceSet:
    prof = synth_profile(ScalingSpec(1700.0, 2.0, grid=CASE_GRID))
    records = {}
    for i in range(n):
        name = f"clone{i}"
        feats = features_from_magnitudes(name, _magnitudes({5: 300, 6: 500, 8: 200}),
                                         utilization=UtilizationPoint(50.0, 50.0))
        records[name] = WorkloadRecord(
            feats, ScalingProfile(name, prof.entries, prof.uncapped_freq, prof.uncapped_runtime))
    return ReferenceSet(750.0, records)


def baseline_separation_set() -> tuple[ReferenceSet, WorkloadRecord]:
    """Two references with (nearly) equal mean power but different spike shapes
    and curves, and a target shaped like the bimodal one whose mean is closer
    to the unimodal one."""
    bimodal = np.concatenate([np.full(500, 0.66), np.full(500, 1.56)])  # mean 1.110
    unimodal = np.full(1000, 1.118)
    target = np.concatenate([np.full(490, 0.66), np.full(510, 1.56)])   # mean 1.119
    grid = CASE_GRID
    prof_a = synth_profile(ScalingSpec(1500.0, 2.0, grid=grid), "bursty")
    prof_b = synth_profile(ScalingSpec(1900.0, 2.0, grid=grid), "steady")
    recs = {
        "bursty": WorkloadRecord(features_from_magnitudes("bursty", bimodal,
                                                          utilization=UtilizationPoint(60, 40)), prof_a),
        "steady": WorkloadRecord(features_from_magnitudes("steady", unimodal,
                                                          utilization=UtilizationPoint(62, 41)), prof_b),
        "quiet": WorkloadRecord(features_from_magnitudes("quiet", np.full(1000, 0.55),
                                                         utilization=UtilizationPoint(10, 90)),
                                synth_profile(ScalingSpec(2100.0, 0.5, grid=grid), "quiet")),
    }
    tgt = WorkloadRecord(features_from_magnitudes("new-bursty", target,
                                                  utilization=UtilizationPoint(61, 40)),
                         ScalingProfile("new-bursty", prof_a.entries, prof_a.uncapped_freq,
                                        prof_a.uncapped_runtime))
    return ReferenceSet(750.0, recs), tgt


def smooth_set(seed: int, n: int = 12, spread: float = 0.12, samples: int = 4000) -> ReferenceSet:
    """Workloads with Gaussian spike distributions at random centres."""
    rng = np.random.default_rng(seed)
    centres = np.sort(rng.uniform(0.8, 1.7, n))
    records = {}
    for i, c in enumerate(centres):
        name = f"smooth{i:02d}"
        feats = features_from_magnitudes(name, smooth_magnitudes(rng, c, spread, samples),
                                         utilization=UtilizationPoint(*rng.uniform(5, 95, 2)))
        cross = CASE_GRID[int(rng.integers(len(CASE_GRID)))]
        records[name] = WorkloadRecord(feats, synth_profile(ScalingSpec(cross, 1.0, grid=CASE_GRID), name))
    return ReferenceSet(750.0, records)

"""Frequency-cap selection by nearest-neighbour transfer of scaling profiles.

A target is profiled once, uncapped. Its power neighbour (cosine distance over
spike vectors) supplies the percentile-power-vs-frequency curve; its
utilization neighbour supplies the degradation-vs-frequency curve. The cap is
read off the neighbour's curve.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cluster import (
    NeighborResult,
    kmeans_fit,
    nearest_power_neighbor,
    nearest_util_neighbor,
    silhouette_sweep,
)
from .errors import (
    InsufficientData,
    InvalidParameter,
    NoFeasibleCap,
    ZeroVector,
)
from .features import PowerSummary, WorkloadFeatures, build_spike_vector, check_bin_width
from .refset import ReferenceSet, ScalingProfile, record_id, refset_materialize_vectors

DEFAULT_CANDIDATES = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5)
DEFAULT_POWER_BINS = (0.0, 0.01, 0.02, 0.05, 0.1, 0.2, math.inf)
DEFAULT_PERF_BINS = (0.0, 5.0, 10.0, 20.0, 40.0, math.inf)


class Objective(str, enum.Enum):
    POWER = "power"
    PERF = "perf"


@dataclass(frozen=True)
class Bounds:
    power_multiple: float = 1.3
    perf_percent: float = 5.0
    percentile: int = 90
    min_freq_mhz: float | None = None
    min_freq_fraction: float = 0.6

    def __post_init__(self):
        if not self.power_multiple > 0:
            raise InvalidParameter("power bound multiple must be > 0")
        if not self.perf_percent >= 0:
            raise InvalidParameter("perf bound must be >= 0")
        if self.percentile not in (90, 95, 99):
            raise InvalidParameter(f"percentile must be 90, 95 or 99, got {self.percentile}")

    def floor_for(self, profile: ScalingProfile) -> float:
        if self.min_freq_mhz is not None:
            return self.min_freq_mhz
        return self.min_freq_fraction * profile.uncapped_freq


# --- cap selection on one profile -------------------------------------------


def cap_power_centric(profile: ScalingProfile, bound_multiple: float = 1.3,
                      percentile: int = 90) -> float:
    """Highest grid frequency whose percentile power is strictly below the bound."""
    if not bound_multiple > 0:
        raise InvalidParameter("bound multiple must be > 0")
    for e in reversed(profile.entries):
        if e.percentile(percentile) < bound_multiple:
            return e.freq_mhz
    raise NoFeasibleCap(f"{profile.workload}: p{percentile} never drops below {bound_multiple} x TDP")


def cap_perf_centric(profile: ScalingProfile, bound_percent: float = 5.0,
                     floor_mhz: float | None = None) -> float:
    """Lowest grid frequency (at or above ``floor_mhz``) with degradation <= bound."""
    if not bound_percent >= 0:
        raise InvalidParameter("bound percent must be >= 0")
    for e in profile.entries:
        if floor_mhz is not None and e.freq_mhz < floor_mhz:
            continue
        if e.perf_degradation <= bound_percent:
            return e.freq_mhz
    raise NoFeasibleCap(f"{profile.workload}: no frequency keeps degradation within {bound_percent}%")


def prediction_error_power(observed_rel_tdp: float, bound_multiple: float = 1.3) -> float:
    """Overshoot of the bound in percent of the bound; 0 when at or under it."""
    return max(0.0, (observed_rel_tdp - bound_multiple) / bound_multiple) * 100.0


def prediction_error_perf(observed_degradation: float, bound_percent: float = 5.0) -> float:
    return max(0.0, observed_degradation - bound_percent)


def profiling_savings(times: Mapping[float, float], f0: float) -> float:
    """Percent of sweep time avoided by profiling only at ``f0``."""
    if f0 not in times:
        raise InvalidParameter(f"no profiling time recorded for base frequency {f0}")
    vals = list(times.values())
    if any(not t > 0 for t in vals):
        raise InvalidParameter("profiling times must be > 0")
    return (1.0 - times[f0] / math.fsum(vals)) * 100.0


# --- neighbours -------------------------------------------------------------


def baseline_mean_power_neighbor(target: PowerSummary, rs: ReferenceSet,
                                 exclude: str | None = None) -> NeighborResult:
    """Comparator: nearest reference by mean power alone."""
    cands = [(k, abs(r.summary.mean_rel_tdp - target.mean_rel_tdp))
             for k, r in rs.records.items() if k != exclude]
    if not cands:
        raise InsufficientData("empty reference set")
    best = min(cands, key=lambda p: (p[1], p[0]))
    return NeighborResult(best[0], float(best[1]))


def choose_bin_size(target_magnitudes, target_pct: float, rs: ReferenceSet,
                    candidates: Sequence[float] = DEFAULT_CANDIDATES, percentile: int = 90,
                    exclude: str | None = None) -> tuple[float, dict[float, float]]:
    """Bin width minimising |pct(target) - pct(neighbour)| at the uncapped clock.

    Returns ``(best_c, {c: error})``; ties go to the smaller width.
    """
    if not candidates:
        raise InvalidParameter("no candidate bin widths")
    errors = {}
    for c in sorted(candidates):
        check_bin_width(c)
        q = build_spike_vector(target_magnitudes, c)
        nn = nearest_power_neighbor(q, refset_materialize_vectors(rs, c), exclude=exclude)
        errors[c] = abs(target_pct - rs[nn.neighbor].summary.percentile(percentile))
    best = min(errors, key=lambda c: (errors[c], c))
    return best, errors


def power_neighbor(target: WorkloadFeatures, rs: ReferenceSet, bin_width: float,
                   exclude: str | None = None) -> NeighborResult:
    q = target.spike_vector(bin_width)
    return nearest_power_neighbor(q, refset_materialize_vectors(rs, bin_width), exclude=exclude)


def util_neighbor(target: WorkloadFeatures, rs: ReferenceSet, exclude: str | None = None,
                  same_cluster: bool = False, k: int | None = None,
                  seed: int = 0) -> tuple[NeighborResult, list[str]]:
    """Euclidean nearest reference in (SM, DRAM) utilization space.

    With ``same_cluster`` the target joins a K-means fit of the references and
    only members of its cluster are eligible; a singleton cluster falls back to
    the global search.
    """
    if target.utilization is None:
        raise InsufficientData(f"{target.workload}: no utilization data")
    refs = {kk: r.utilization for kk, r in rs.records.items()
            if kk != exclude and r.utilization is not None}
    warnings: list[str] = []
    if same_cluster:
        tid = "\x00target"
        pts = dict(refs)
        pts[tid] = target.utilization
        try:
            if k is None:
                k, _ = silhouette_sweep(pts, seed=seed)
            model = kmeans_fit(pts, k, seed)
            mine = model.assignments[tid]
            peers = {kk: v for kk, v in refs.items() if model.assignments[kk] == mine}
        except (InsufficientData, InvalidParameter) as e:
            peers = {}
            warnings.append(f"same-cluster search unavailable ({e}); using global neighbour")
        if peers:
            refs = peers
        elif not warnings:
            warnings.append("target is alone in its utilization cluster; using global neighbour")
    return nearest_util_neighbor(target.utilization, refs), warnings


# --- the full selection -----------------------------------------------------


@dataclass(frozen=True)
class CapRecommendation:
    workload: str
    objective: Objective
    chosen_freq: float
    neighbor: NeighborResult
    bound: float
    predicted_value: float
    bin_width: float | None = None
    percentile: int | None = None
    infeasible: bool = False
    warnings: tuple[str, ...] = ()
    bin_errors: Mapping[float, float] = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {
            "workload": self.workload,
            "objective": self.objective.value,
            "chosen_freq_mhz": self.chosen_freq,
            "neighbor": self.neighbor.to_json(),
            "bin_width": self.bin_width,
            "bound": self.bound,
            "percentile": self.percentile,
            "predicted_value": self.predicted_value,
            "infeasible": self.infeasible,
            "warnings": list(self.warnings),
        }


def _power_cap(profile: ScalingProfile, bounds: Bounds) -> tuple[float, bool]:
    try:
        return cap_power_centric(profile, bounds.power_multiple, bounds.percentile), False
    except NoFeasibleCap:
        # a setting is still needed; report the lowest one and flag it
        return float(profile.entries[0].freq_mhz), True


def select_optimal_freq(target: WorkloadFeatures, rs: ReferenceSet,
                        objective: Objective | str = Objective.POWER,
                        bounds: Bounds = Bounds(), bin_width: float | None = None,
                        candidates: Sequence[float] = DEFAULT_CANDIDATES,
                        exclude: str | None = None, same_cluster: bool = False,
                        k_util: int | None = None, seed: int = 0) -> CapRecommendation:
    """Pick a frequency cap for ``target`` from its neighbours' scaling data.

    ``bin_width=None`` selects the width automatically from ``candidates``.
    """
    objective = Objective(objective)
    if len([k for k in rs.records if k != exclude]) == 0:
        raise InsufficientData("reference set has no other workloads")
    warnings: list[str] = []
    if objective is Objective.POWER:
        c_used, bin_errors = None, {}
        try:
            if not target.spike_ticks:
                raise ZeroVector("target has no spikes")
            if bin_width is None:
                c_used, bin_errors = choose_bin_size(
                    target.magnitudes, target.summary.percentile(bounds.percentile), rs,
                    candidates, bounds.percentile, exclude)
            else:
                c_used = bin_width
            nn = power_neighbor(target, rs, c_used, exclude)
        except ZeroVector:
            nn, w = util_neighbor(target, rs, exclude, same_cluster, k_util, seed)
            warnings.append("target has no samples >= 0.5 x TDP; used utilization neighbour")
            warnings.extend(w)
            c_used = None
        profile = rs[nn.neighbor].profile
        freq, infeasible = _power_cap(profile, bounds)
        if infeasible:
            warnings.append(f"neighbour {nn.neighbor} exceeds the bound at every frequency")
        return CapRecommendation(
            workload=record_id(target),
            objective=objective, chosen_freq=freq, neighbor=nn, bound=bounds.power_multiple,
            predicted_value=profile.percentile_at(freq, bounds.percentile), bin_width=c_used,
            percentile=bounds.percentile, infeasible=infeasible, warnings=tuple(warnings),
            bin_errors=bin_errors)

    nn, w = util_neighbor(target, rs, exclude, same_cluster, k_util, seed)
    warnings.extend(w)
    profile = rs[nn.neighbor].profile
    freq = cap_perf_centric(profile, bounds.perf_percent, bounds.floor_for(profile))
    return CapRecommendation(
        workload=record_id(target),
        objective=objective, chosen_freq=freq, neighbor=nn, bound=bounds.perf_percent,
        predicted_value=profile.degradation_at(freq), warnings=tuple(warnings))


def select_with_baseline(target: WorkloadFeatures, rs: ReferenceSet,
                         objective: Objective | str = Objective.POWER,
                         bounds: Bounds = Bounds(), exclude: str | None = None) -> CapRecommendation:
    """Same cap rules, but the neighbour is chosen by mean power only."""
    objective = Objective(objective)
    nn = baseline_mean_power_neighbor(target.summary, rs, exclude)
    profile = rs[nn.neighbor].profile
    wid = record_id(target)
    if objective is Objective.POWER:
        freq, infeasible = _power_cap(profile, bounds)
        return CapRecommendation(wid, objective, freq, nn, bounds.power_multiple,
                                 profile.percentile_at(freq, bounds.percentile),
                                 percentile=bounds.percentile, infeasible=infeasible)
    freq = cap_perf_centric(profile, bounds.perf_percent, bounds.floor_for(profile))
    return CapRecommendation(wid, objective, freq, nn, bounds.perf_percent,
                             profile.degradation_at(freq))


# --- hold-one-out -----------------------------------------------------------


def observed_error(rec: CapRecommendation, own: ScalingProfile, bounds: Bounds) -> tuple[float, float]:
    """(observed value, error %) of applying ``rec`` to the target's own profile."""
    if rec.objective is Objective.POWER:
        obs = own.percentile_at(rec.chosen_freq, bounds.percentile)
        return obs, prediction_error_power(obs, bounds.power_multiple)
    obs = own.degradation_at(rec.chosen_freq)
    return obs, prediction_error_perf(obs, bounds.perf_percent)


@dataclass(frozen=True)
class EvalRow:
    workload: str
    neighbor: str
    distance: float
    chosen_freq: float
    predicted: float
    observed: float
    error: float
    fallback: bool
    baseline_neighbor: str
    baseline_freq: float
    baseline_observed: float
    baseline_error: float

    def to_json(self) -> dict:
        return {
            "workload": self.workload,
            "neighbor": self.neighbor,
            "distance": self.distance,
            "chosen_freq_mhz": self.chosen_freq,
            "predicted": self.predicted,
            "observed": self.observed,
            "error": self.error,
            "fallback": self.fallback,
            "baseline_neighbor": self.baseline_neighbor,
            "baseline_freq_mhz": self.baseline_freq,
            "baseline_observed": self.baseline_observed,
            "baseline_error": self.baseline_error,
        }


@dataclass(frozen=True)
class HistogramBin:
    lo: float
    hi: float
    count: int
    mean_error: float | None

    def to_json(self) -> dict:
        return {"lo": self.lo, "hi": None if math.isinf(self.hi) else self.hi,
                "count": self.count, "mean_error": self.mean_error}


@dataclass(frozen=True)
class EvaluationReport:
    objective: Objective
    bounds: Bounds
    rows: tuple[EvalRow, ...]
    histogram: tuple[HistogramBin, ...]

    @property
    def mean_abs_error(self) -> float:
        return float(np.mean([abs(r.error) for r in self.rows]))

    @property
    def baseline_mean_abs_error(self) -> float:
        return float(np.mean([abs(r.baseline_error) for r in self.rows]))

    @property
    def n_fallback(self) -> int:
        return sum(r.fallback for r in self.rows)

    def row(self, workload: str) -> EvalRow:
        return next(r for r in self.rows if r.workload == workload)

    def to_json(self) -> dict:
        b = self.bounds
        return {
            "objective": self.objective.value,
            "bounds": {"power_multiple": b.power_multiple, "perf_percent": b.perf_percent,
                       "percentile": b.percentile},
            "mean_abs_error": self.mean_abs_error,
            "baseline_mean_abs_error": self.baseline_mean_abs_error,
            "n_fallback": self.n_fallback,
            "per_workload": [r.to_json() for r in self.rows],
            "histogram": [h.to_json() for h in self.histogram],
        }


def distance_histogram(rows: Sequence[EvalRow], edges: Sequence[float]) -> tuple[HistogramBin, ...]:
    """Errors grouped by neighbour distance; bins are [lo, hi), the last one closed.

    Fallback rows (distance in a different metric) are left out.
    """
    edges = list(edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise InvalidParameter("distance bin edges must be strictly increasing")
    out = []
    rows = [r for r in rows if not r.fallback]
    for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
        last = i == len(edges) - 2
        sel = [r.error for r in rows if lo <= r.distance < hi or (last and r.distance == hi)]
        out.append(HistogramBin(lo, hi, len(sel), float(np.mean(sel)) if sel else None))
    return tuple(out)


def holdout_evaluate(rs: ReferenceSet, objective: Objective | str = Objective.POWER,
                     bounds: Bounds = Bounds(), distance_bins: Sequence[float] | None = None,
                     bin_width: float | None = None,
                     candidates: Sequence[float] = DEFAULT_CANDIDATES,
                     same_cluster: bool = False, seed: int = 0) -> EvaluationReport:
    """Predict each workload from all the others and score it on its own profile."""
    objective = Objective(objective)
    if len(rs) < 2:
        raise InsufficientData("hold-one-out needs at least 2 workloads")
    if distance_bins is None:
        distance_bins = DEFAULT_POWER_BINS if objective is Objective.POWER else DEFAULT_PERF_BINS
    rows = []
    for wid in rs.ids:
        rec = rs[wid]
        pred = select_optimal_freq(rec.features, rs, objective, bounds, bin_width, candidates,
                                   exclude=wid, same_cluster=same_cluster, seed=seed)
        obs, err = observed_error(pred, rec.profile, bounds)
        base = select_with_baseline(rec.features, rs, objective, bounds, exclude=wid)
        bobs, berr = observed_error(base, rec.profile, bounds)
        fallback = objective is Objective.POWER and pred.bin_width is None
        rows.append(EvalRow(wid, pred.neighbor.neighbor, pred.neighbor.distance, pred.chosen_freq,
                            pred.predicted_value, obs, err, fallback,
                            base.neighbor.neighbor, base.chosen_freq, bobs, berr))
    return EvaluationReport(objective, bounds, tuple(rows), distance_histogram(rows, distance_bins))


def bin_size_errors(rs: ReferenceSet, candidates: Sequence[float] = DEFAULT_CANDIDATES,
                    percentile: int = 90) -> dict[float, float]:
    """Mean over held-out workloads of |pct(T) - pct(NN_c(T))| for each width c.

    Workloads without spikes are skipped.
    """
    sums = {c: [] for c in candidates}
    for wid in rs.ids:
        rec = rs[wid]
        if not rec.features.spike_ticks:
            continue
        _, errs = choose_bin_size(rec.features.magnitudes, rec.summary.percentile(percentile),
                                  rs, candidates, percentile, exclude=wid)
        for c, e in errs.items():
            sums[c].append(e)
    if not any(sums.values()):
        raise InsufficientData("no workload with spikes to evaluate")
    return {c: float(np.mean(v)) for c, v in sorted(sums.items())}

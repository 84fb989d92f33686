"""Synthetic workloads with known ground truth.

Traces are built backwards from the filtered power we want to observe: active
samples are laid out as a non-decreasing ramp of target levels, and the raw
power is obtained by inverting the two-tap filter. For a non-decreasing target
the inverse stays strictly between 0 and twice the target, so the energy
counter is always monotone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidSpec
from .features import (
    SPIKE_LOWER,
    KernelRecord,
    SpikeVector,
    UtilizationPoint,
    WorkloadFeatures,
    bin_edges,
    check_bin_width,
    quantize,
    summarize_values,
)
from .refset import ProfileEntry, ScalingProfile
from .trace import DEFAULT_ALPHA, RawSampleSeries

DEFAULT_GRID = (1300.0, 1500.0, 1700.0, 1900.0, 2100.0)
EDGE_MARGIN = 2e-3  # keep levels this far (x TDP) from bin edges
P90_STEP = 0.05  # p90 rise per grid step in synthesized profiles
P90_BELOW = 0.02  # p90 sits this far under the bound at the crossing frequency


@dataclass(frozen=True)
class ScalingSpec:
    crossing_freq: float
    slope_pct_per_100mhz: float = 1.0
    grid: tuple[float, ...] = DEFAULT_GRID
    bound_multiple: float = 1.3
    uncapped_runtime_s: float = 100.0


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    occupancies: tuple[float, ...]
    bin_width: float = 0.1
    sample_count: int = 1000  # active samples (between idle head and tail)
    idle_head: int = 0
    idle_tail: int = 0
    tdp: float = 750.0
    noise_amplitude: float = 0.0  # uniform jitter around bin centres, x TDP
    spike_fraction: float = 1.0  # share of active samples at or above 0.5 x TDP
    idle_level: float = 0.1
    interval_us: int = 1000
    scaling: ScalingSpec | None = None
    workload: str = "synthetic"
    config: str = ""

    def __post_init__(self):
        n = check_bin_width(self.bin_width)
        occ = np.asarray(self.occupancies, dtype=np.float64)
        if occ.size != n:
            raise InvalidSpec(f"{n} occupancies needed for bin width {self.bin_width}, got {occ.size}")
        if np.any(occ < 0) or abs(occ.sum() - 1.0) > 1e-9:
            raise InvalidSpec("occupancies must be non-negative and sum to 1")
        if self.sample_count < 100:
            raise InvalidSpec("sample_count must be >= 100")
        if min(self.idle_head, self.idle_tail) < 0:
            raise InvalidSpec("idle head/tail lengths must be >= 0")
        if not 0.0 <= self.spike_fraction <= 1.0:
            raise InvalidSpec("spike_fraction must be within [0, 1]")
        if not 0.0 < self.idle_level < SPIKE_LOWER:
            raise InvalidSpec("idle level must be sub-threshold")
        if self.tdp <= 0 or self.interval_us <= 0:
            raise InvalidSpec("tdp and interval must be positive")
        half = 0.5 * np.diff(bin_edges(self.bin_width)).min()
        if self.noise_amplitude < 0 or self.noise_amplitude > half - EDGE_MARGIN:
            raise InvalidSpec(f"noise amplitude {self.noise_amplitude} would push samples "
                              f"across bin edges (max {half - EDGE_MARGIN:.4f})")

    @property
    def n_spikes(self) -> int:
        return int(round(self.spike_fraction * self.sample_count))


def largest_remainder(fractions, total: int) -> np.ndarray:
    """Integer counts summing to ``total``, closest to ``fractions * total``."""
    f = np.asarray(fractions, dtype=np.float64) * total
    base = np.floor(f).astype(np.int64)
    short = total - int(base.sum())
    order = sorted(range(f.size), key=lambda i: (-(f[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def expected_vector(spec: SynthSpec) -> SpikeVector:
    """The spike vector the generator actually realises (integer counts)."""
    counts = largest_remainder(spec.occupancies, spec.n_spikes)
    return SpikeVector(spec.bin_width, tuple(counts.tolist()), spec.tdp)


def target_levels(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Sorted active-sample levels (x TDP) to be seen after filtering."""
    edges = bin_edges(spec.bin_width)
    counts = largest_remainder(spec.occupancies, spec.n_spikes)
    parts = []
    n_low = spec.sample_count - spec.n_spikes
    if n_low:
        parts.append(rng.uniform(spec.idle_level, SPIKE_LOWER - EDGE_MARGIN, n_low))
    for j, n in enumerate(counts):
        if n:
            centre = 0.5 * (edges[j] + edges[j + 1])
            parts.append(centre + rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, n))
    return np.sort(np.concatenate(parts))


def invert_filter(target, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Raw series whose two-tap filtered output is exactly ``target``."""
    f = np.asarray(target, dtype=np.float64)
    p = np.empty_like(f)
    p[0] = f[0]
    for t in range(1, f.size):
        p[t] = (f[t] - (1.0 - alpha) * p[t - 1]) / alpha
    return p


def synth_trace(spec: SynthSpec) -> RawSampleSeries:
    rng = np.random.default_rng(spec.seed)
    active = target_levels(spec, rng)
    head = np.full(spec.idle_head, spec.idle_level)
    raw_rel = invert_filter(np.concatenate([head, active]))
    if np.any(raw_rel <= 0):
        raise InvalidSpec("filter inversion produced non-positive power")
    raw_rel = np.concatenate([raw_rel, np.full(spec.idle_tail, spec.idle_level)])
    n = raw_rel.size
    jitter = rng.integers(-spec.interval_us // 10, spec.interval_us // 10 + 1, n)
    dt = spec.interval_us + jitter
    ts = np.concatenate([[0], np.cumsum(dt)]).astype(np.float64)
    energy = np.concatenate([[0.0], np.cumsum(raw_rel * spec.tdp * dt)])
    energy = np.rint(energy).astype(np.int64)
    activity = np.zeros(n + 1, dtype=np.int64)
    activity[1 + spec.idle_head:1 + spec.idle_head + spec.sample_count] = rng.integers(
        1, 10_000, spec.sample_count)
    return RawSampleSeries(ts, spec.tdp, energy_uj=energy, activity=activity)


def synth_profile(spec: ScalingSpec | SynthSpec, workload: str | None = None) -> ScalingProfile:
    """Profile whose p90 crosses the bound exactly at ``crossing_freq`` and
    whose degradation is linear in the cap, zero at the top of the grid."""
    if isinstance(spec, SynthSpec):
        workload = workload or spec.workload
        if spec.scaling is None:
            raise InvalidSpec("spec has no scaling section")
        spec = spec.scaling
    grid = tuple(float(f) for f in spec.grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidSpec("grid must be strictly ascending")
    if spec.crossing_freq not in grid:
        raise InvalidSpec(f"crossing frequency {spec.crossing_freq} is not on the grid {grid}")
    if spec.slope_pct_per_100mhz < 0:
        raise InvalidSpec("degradation slope must be >= 0")
    ic = grid.index(spec.crossing_freq)
    fmax = grid[-1]
    entries, times = [], {}
    for i, f in enumerate(grid):
        p90 = spec.bound_multiple + P90_STEP * (i - ic) - P90_BELOW
        deg = spec.slope_pct_per_100mhz * (fmax - f) / 100.0
        entries.append(ProfileEntry(f, p90, p90 + 0.03, p90 + 0.06, deg))
        times[f] = spec.uncapped_runtime_s * (1.0 + deg / 100.0)
    return ScalingProfile(workload or "synthetic", tuple(entries), fmax,
                          spec.uncapped_runtime_s, times)


def perf_cap_closed_form(spec: ScalingSpec, bound_percent: float, floor_mhz: float) -> float:
    """Algebraic inverse of the linear degradation model, snapped up to the grid."""
    fmax = spec.grid[-1]
    s = spec.slope_pct_per_100mhz
    lowest_ok = -np.inf if s == 0 else fmax - 100.0 * bound_percent / s
    ok = [f for f in spec.grid if f >= floor_mhz and f >= lowest_ok - 1e-9]
    return float(min(ok))


def synth_kernels(point: UtilizationPoint, n_pairs: int = 4, seed: int = 0,
                  prefix: str = "kernel") -> list[KernelRecord]:
    """Kernel table whose runtime-weighted utilization is exactly ``point``."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_pairs):
        dur = float(rng.integers(1_000, 1_000_000))
        ds = rng.uniform(0, min(point.app_sm_util, 100 - point.app_sm_util))
        dd = rng.uniform(0, min(point.app_dram_util, 100 - point.app_dram_util))
        out.append(KernelRecord(f"{prefix}_{2 * i}", dur, point.app_sm_util + ds, point.app_dram_util + dd))
        out.append(KernelRecord(f"{prefix}_{2 * i + 1}", dur, point.app_sm_util - ds, point.app_dram_util - dd))
    return out


def random_spec(rng: np.random.Generator, bin_width: float = 0.1, **kw) -> SynthSpec:
    """A random valid spec: sparse occupancies, random idle margins and noise."""
    n = check_bin_width(bin_width)
    k = int(rng.integers(1, min(n, 6) + 1))
    support = rng.choice(n, size=k, replace=False)
    occ = np.zeros(n)
    occ[support] = rng.dirichlet(np.ones(k))
    occ = occ / occ.sum()
    half = 0.5 * np.diff(bin_edges(bin_width)).min()
    params = dict(
        seed=int(rng.integers(2**31)),
        occupancies=tuple(occ.tolist()),
        bin_width=bin_width,
        sample_count=int(rng.integers(100, 3000)),
        idle_head=int(rng.integers(0, 200)),
        idle_tail=int(rng.integers(0, 200)),
        tdp=float(rng.choice([300.0, 400.0, 750.0])),
        noise_amplitude=float(rng.uniform(0, half - EDGE_MARGIN)),
    )
    params.update(kw)
    return SynthSpec(**params)


def smooth_magnitudes(rng: np.random.Generator, centre: float, spread: float, n: int) -> np.ndarray:
    """Gaussian spike magnitudes clipped into [0.5, 2.0)."""
    return np.clip(rng.normal(centre, spread, n), SPIKE_LOWER, 2.0 - 1e-4)


def features_from_magnitudes(workload: str, magnitudes, config: str = "",
                             utilization: UtilizationPoint | None = None,
                             below: Sequence[float] = (), tdp: float = 750.0) -> WorkloadFeatures:
    """Features for a workload known only by its spike magnitudes (plus any
    sub-threshold samples in ``below``), bypassing trace ingest."""
    mags = np.asarray(magnitudes, dtype=np.float64)
    ticks = quantize(mags)
    rel = np.concatenate([ticks / 10_000, np.asarray(below, dtype=np.float64)])
    return WorkloadFeatures(workload, config, tdp, tuple(ticks.tolist()),
                            summarize_values(rel), utilization)


"""Per-workload features: spike-magnitude histograms, power percentiles, and
duration-weighted utilization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientData, InvalidParameter, InvalidRecord, ParseError
from .trace import PowerTrace

SPIKE_LOWER = 0.5
SPIKE_UPPER = 2.0
DETECT_THRESHOLD = 0.5
TICK = 1e-4  # magnitude quantum, fraction of TDP
TICKS_PER_UNIT = 10_000
EDGE_DECIMALS = 12
PERCENTILES = (90, 95, 99)


def check_bin_width(c: float) -> int:
    """Validate a bin width and return the number of bins over [0.5, 2.0).

    Widths that do not divide 1.5 get a final short bin ending at 2.0.
    """
    if not (isinstance(c, (int, float)) and math.isfinite(c) and 0 < c <= SPIKE_UPPER - SPIKE_LOWER):
        raise InvalidParameter(f"bin width must be in (0, 1.5], got {c!r}")
    q = (SPIKE_UPPER - SPIKE_LOWER) / c
    r = round(q)
    if abs(q - r) < 1e-9:
        return int(r)
    return int(math.ceil(q))


def bin_edges(c: float) -> np.ndarray:
    n = check_bin_width(c)
    edges = np.round(SPIKE_LOWER + np.arange(n + 1) * c, EDGE_DECIMALS)
    edges[-1] = SPIKE_UPPER
    return edges


@dataclass(frozen=True)
class SpikeVector:
    bin_width: float
    counts: tuple[int, ...]
    device_tdp: float = 1.0
    clamped: int = 0

    lower = SPIKE_LOWER
    upper = SPIKE_UPPER

    def __post_init__(self):
        n = check_bin_width(self.bin_width)
        if len(self.counts) != n:
            raise InvalidParameter(f"bin width {self.bin_width} needs {n} bins, got {len(self.counts)}")
        object.__setattr__(self, "counts", tuple(int(x) for x in self.counts))

    @property
    def total_spikes(self) -> int:
        return sum(self.counts)

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    @property
    def edges(self) -> np.ndarray:
        return bin_edges(self.bin_width)

    @property
    def values(self) -> np.ndarray:
        c = np.asarray(self.counts, dtype=np.float64)
        total = c.sum()
        return c / total if total > 0 else c

    @property
    def is_zero(self) -> bool:
        return self.total_spikes == 0

    def to_json(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "values": [float(v) for v in self.values],
            "total_spikes": self.total_spikes,
            "clamped": self.clamped,
        }


def detect_spikes(trace: PowerTrace, threshold: float = DETECT_THRESHOLD) -> np.ndarray:
    """Relative magnitudes of samples at or above ``threshold`` x TDP, in time order."""
    rel = trace.power_w / trace.device_tdp
    return rel[rel >= threshold]


def build_spike_vector(magnitudes, bin_width: float, tdp: float = 1.0) -> SpikeVector:
    edges = bin_edges(bin_width)
    r = np.asarray(magnitudes, dtype=np.float64).ravel()
    if r.size and r.min() < SPIKE_LOWER:
        raise InvalidParameter(f"spike magnitudes must be >= {SPIKE_LOWER}, got {r.min()!r}")
    n = edges.size - 1
    # values >= 2.0 land in the top bin
    idx = np.clip(np.searchsorted(edges, r, side="right") - 1, 0, n - 1)
    counts = np.bincount(idx, minlength=n)
    return SpikeVector(bin_width, tuple(counts.tolist()), tdp, int(np.count_nonzero(r >= SPIKE_UPPER)))


def merge_adjacent(vec: SpikeVector, factor: int = 2) -> SpikeVector:
    """Coarsen by summing runs of ``factor`` bins (the last run may be short)."""
    if factor < 1:
        raise InvalidParameter("factor must be >= 1")
    coarse = round(vec.bin_width * factor, EDGE_DECIMALS)
    counts = [sum(vec.counts[i:i + factor]) for i in range(0, vec.n_bins, factor)]
    return SpikeVector(coarse, tuple(counts), vec.device_tdp, vec.clamped)


# --- percentiles ------------------------------------------------------------


def nearest_rank(sorted_values: np.ndarray, pct) -> float:
    """The ceil(pct/100 * N)-th order statistic of an ascending array."""
    n = sorted_values.size
    if n == 0:
        raise InsufficientData("percentile of an empty set")
    if isinstance(pct, (int, np.integer)):
        k = -(-int(pct) * n // 100)
    else:
        k = math.ceil(pct * n / 100.0)
    k = min(max(k, 1), n)
    return float(sorted_values[k - 1])


@dataclass(frozen=True)
class PowerSummary:
    mean_rel_tdp: float
    p90_rel_tdp: float
    p95_rel_tdp: float
    p99_rel_tdp: float
    max_rel_tdp: float

    def percentile(self, pct: int) -> float:
        try:
            return {90: self.p90_rel_tdp, 95: self.p95_rel_tdp, 99: self.p99_rel_tdp}[int(pct)]
        except KeyError:
            raise InvalidParameter(f"percentile must be one of 90/95/99, got {pct}") from None

    def to_json(self) -> dict:
        return {
            "mean_rel_tdp": self.mean_rel_tdp,
            "p90_rel_tdp": self.p90_rel_tdp,
            "p95_rel_tdp": self.p95_rel_tdp,
            "p99_rel_tdp": self.p99_rel_tdp,
            "max_rel_tdp": self.max_rel_tdp,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PowerSummary":
        return cls(**{k: float(d[k]) for k in
                      ("mean_rel_tdp", "p90_rel_tdp", "p95_rel_tdp", "p99_rel_tdp", "max_rel_tdp")})


def summarize_values(rel) -> PowerSummary:
    v = np.sort(np.asarray(rel, dtype=np.float64).ravel())
    if v.size == 0:
        raise InsufficientData("cannot summarize an empty trace")
    return PowerSummary(
        mean_rel_tdp=math.fsum(v) / v.size,
        p90_rel_tdp=nearest_rank(v, 90),
        p95_rel_tdp=nearest_rank(v, 95),
        p99_rel_tdp=nearest_rank(v, 99),
        max_rel_tdp=float(v[-1]),
    )


def summarize_power(trace: PowerTrace, spikes_only: bool = False) -> PowerSummary:
    """Mean/percentiles/max relative to TDP over every sample of the trace.

    ``spikes_only`` restricts the statistics to samples at or above 0.5 x TDP.
    """
    rel = trace.power_w / trace.device_tdp
    if spikes_only:
        rel = rel[rel >= DETECT_THRESHOLD]
    return summarize_values(rel)


def cdf_points(values) -> list[tuple[float, float]]:
    """Empirical CDF as (value, fraction <= value) at each distinct value."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InsufficientData("empty input")
    uniq, counts = np.unique(v, return_counts=True)
    cum = np.cumsum(counts)
    return [(float(u), float(c) / v.size) for u, c in zip(uniq, cum)]


# --- utilization ------------------------------------------------------------


@dataclass(frozen=True)
class KernelRecord:
    name: str
    duration_ns: float
    sm_util: float
    dram_util: float

    def __post_init__(self):
        if not (self.duration_ns > 0 and math.isfinite(self.duration_ns)):
            raise InvalidRecord(f"kernel {self.name!r}: duration must be > 0, got {self.duration_ns}")
        for label, v in (("sm_util", self.sm_util), ("dram_util", self.dram_util)):
            if not 0 <= v <= 100:
                raise InvalidRecord(f"kernel {self.name!r}: {label} must be within [0, 100], got {v}")


@dataclass(frozen=True)
class UtilizationPoint:
    app_sm_util: float
    app_dram_util: float

    def as_array(self) -> np.ndarray:
        return np.array([self.app_sm_util, self.app_dram_util])

    def to_json(self) -> dict:
        return {"app_sm_util": self.app_sm_util, "app_dram_util": self.app_dram_util}

    @classmethod
    def from_json(cls, d: dict | None) -> "UtilizationPoint | None":
        if d is None:
            return None
        return cls(float(d["app_sm_util"]), float(d["app_dram_util"]))


def aggregate_utilization(kernels: Sequence[KernelRecord]) -> UtilizationPoint:
    """Runtime-weighted mean of per-kernel SM and DRAM utilization."""
    if len(kernels) == 0:
        raise InsufficientData("no kernel records")
    t = np.array([k.duration_ns for k in kernels], dtype=np.float64)
    if np.any(t <= 0):
        raise InvalidRecord("kernel durations must be positive")
    sm = np.array([k.sm_util for k in kernels], dtype=np.float64)
    dram = np.array([k.dram_util for k in kernels], dtype=np.float64)
    total = t.sum()
    app_sm = float(np.dot(t, sm) / total)
    app_dram = float(np.dot(t, dram) / total)
    # keep the convex-combination bound exact under rounding
    app_sm = min(max(app_sm, float(sm.min())), float(sm.max()))
    app_dram = min(max(app_dram, float(dram.min())), float(dram.max()))
    return UtilizationPoint(app_sm, app_dram)


KERNEL_HEADER = ("kernel_name", "duration_ns", "sm_util_pct", "dram_util_pct")


def read_kernels_csv(path) -> list[KernelRecord]:
    path = Path(path)
    spath = str(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file, expected a header row", spath, 1)
    if tuple(h.strip() for h in rows[0]) != KERNEL_HEADER:
        raise ParseError(f"expected header {','.join(KERNEL_HEADER)}", spath, 1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", spath, lineno)
        try:
            out.append(KernelRecord(row[0], float(row[1]), float(row[2]), float(row[3])))
        except ValueError as e:
            raise ParseError(str(e), spath, lineno) from None
    return out


def write_kernels_csv(kernels: Iterable[KernelRecord], path) -> None:
    lines = [",".join(KERNEL_HEADER)]
    for k in kernels:
        lines.append(f"{k.name},{k.duration_ns!r},{k.sm_util!r},{k.dram_util!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- per-workload bundle ----------------------------------------------------


def quantize(magnitudes) -> np.ndarray:
    """Round relative magnitudes to integer ticks of 1e-4 TDP, sorted."""
    r = np.asarray(magnitudes, dtype=np.float64).ravel()
    return np.sort(np.rint(r * TICKS_PER_UNIT).astype(np.int64))


def ticks_to_magnitudes(ticks) -> np.ndarray:
    return np.asarray(ticks, dtype=np.int64) / TICKS_PER_UNIT


@dataclass(frozen=True)
class WorkloadFeatures:
    """Everything measured from one uncapped run of a workload."""

    workload: str
    config: str
    device_tdp: float
    spike_ticks: tuple[int, ...]
    summary: PowerSummary
    utilization: UtilizationPoint | None = None

    @property
    def magnitudes(self) -> np.ndarray:
        return ticks_to_magnitudes(self.spike_ticks)

    def spike_vector(self, bin_width: float) -> SpikeVector:
        return build_spike_vector(self.magnitudes, bin_width, self.device_tdp)

    def to_json(self, bin_width: float = 0.1) -> dict:
        return {
            "workload": self.workload,
            "config": self.config,
            "device_tdp_w": self.device_tdp,
            "spike_vector": self.spike_vector(bin_width).to_json(),
            "spike_ticks": list(self.spike_ticks),
            "summary": self.summary.to_json(),
            "utilization": None if self.utilization is None else self.utilization.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "WorkloadFeatures":
        try:
            return cls(
                workload=str(d["workload"]),
                config=str(d.get("config", "")),
                device_tdp=float(d.get("device_tdp_w", 1.0)),
                spike_ticks=tuple(int(t) for t in d["spike_ticks"]),
                summary=PowerSummary.from_json(d["summary"]),
                utilization=UtilizationPoint.from_json(d.get("utilization")),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidRecord(f"malformed feature record: {e!r}") from None


def extract_features(trace: PowerTrace, workload: str, config: str = "",
                     kernels: Sequence[KernelRecord] | None = None) -> WorkloadFeatures:
    return WorkloadFeatures(
        workload=workload,
        config=config,
        device_tdp=trace.device_tdp,
        spike_ticks=tuple(quantize(detect_spikes(trace)).tolist()),
        summary=summarize_power(trace),
        utilization=aggregate_utilization(kernels) if kernels else None,
    )

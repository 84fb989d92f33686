"""The reference set: profiled workloads with their frequency-scaling data.

Stored as one JSON document (``*.minosref.json``). Spike magnitudes are kept
raw (integer ticks of 1e-4 TDP) so vectors can be rebuilt at any bin width.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import AmbiguousSelection, Conflict, InvalidRecord, ParseError, UnsupportedSchema
from .features import (
    PowerSummary,
    SpikeVector,
    UtilizationPoint,
    WorkloadFeatures,
    build_spike_vector,
    check_bin_width,
)

SCHEMA_VERSION = 1
REFSET_SUFFIX = ".minosref.json"
DEGRADATION_TOLERANCE = 1.0  # percent; capping may look faster than uncapped by noise only


@dataclass(frozen=True)
class ProfileEntry:
    freq_mhz: float
    p90_rel_tdp: float
    p95_rel_tdp: float
    p99_rel_tdp: float
    perf_degradation: float  # percent vs. uncapped runtime

    def percentile(self, pct: int) -> float:
        return {90: self.p90_rel_tdp, 95: self.p95_rel_tdp, 99: self.p99_rel_tdp}[int(pct)]

    def to_json(self) -> dict:
        return {
            "freq_mhz": self.freq_mhz,
            "p90_rel_tdp": self.p90_rel_tdp,
            "p95_rel_tdp": self.p95_rel_tdp,
            "p99_rel_tdp": self.p99_rel_tdp,
            "perf_degradation_pct": self.perf_degradation,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProfileEntry":
        return cls(float(d["freq_mhz"]), float(d["p90_rel_tdp"]), float(d["p95_rel_tdp"]),
                   float(d["p99_rel_tdp"]), float(d["perf_degradation_pct"]))


@dataclass(frozen=True)
class ScalingProfile:
    workload: str
    entries: tuple[ProfileEntry, ...]
    uncapped_freq: float
    uncapped_runtime: float
    profiling_times: Mapping[float, float] | None = None

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise InvalidRecord(f"{self.workload}: profile has no entries")
        freqs = [e.freq_mhz for e in entries]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise InvalidRecord(f"{self.workload}: frequencies must be strictly ascending")
        if freqs[-1] != self.uncapped_freq:
            raise InvalidRecord(f"{self.workload}: top entry {freqs[-1]} != uncapped {self.uncapped_freq}")
        if abs(entries[-1].perf_degradation) > 1e-9:
            raise InvalidRecord(f"{self.workload}: degradation at the uncapped frequency must be 0")
        for e in entries:
            if e.perf_degradation < -DEGRADATION_TOLERANCE:
                raise InvalidRecord(f"{self.workload}: degradation {e.perf_degradation} at "
                                    f"{e.freq_mhz} MHz is below -{DEGRADATION_TOLERANCE}%")
            if not (e.p90_rel_tdp <= e.p95_rel_tdp <= e.p99_rel_tdp):
                raise InvalidRecord(f"{self.workload}: percentiles out of order at {e.freq_mhz} MHz")
        if not self.uncapped_runtime > 0:
            raise InvalidRecord(f"{self.workload}: uncapped runtime must be > 0")
        if self.profiling_times is not None:
            times = {float(k): float(v) for k, v in self.profiling_times.items()}
            if any(v <= 0 for v in times.values()):
                raise InvalidRecord(f"{self.workload}: profiling times must be > 0")
            object.__setattr__(self, "profiling_times", MappingProxyType(dict(sorted(times.items()))))

    @property
    def freqs(self) -> np.ndarray:
        return np.array([e.freq_mhz for e in self.entries])

    def at(self, freq: float) -> ProfileEntry:
        for e in self.entries:
            if e.freq_mhz == freq:
                return e
        raise KeyError(freq)

    def percentile_at(self, freq: float, pct: int) -> float:
        """Percentile power at ``freq``; linear between grid points."""
        ys = [e.percentile(pct) for e in self.entries]
        return float(np.interp(freq, self.freqs, ys))

    def degradation_at(self, freq: float) -> float:
        return float(np.interp(freq, self.freqs, [e.perf_degradation for e in self.entries]))

    def to_json(self) -> dict:
        return {
            "workload": self.workload,
            "uncapped_freq_mhz": self.uncapped_freq,
            "uncapped_runtime_s": self.uncapped_runtime,
            "entries": [e.to_json() for e in self.entries],
            "profiling_times_s": None if self.profiling_times is None else
            {_freq_key(f): t for f, t in self.profiling_times.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "ScalingProfile":
        try:
            times = d.get("profiling_times_s")
            return cls(
                workload=str(d["workload"]),
                entries=tuple(ProfileEntry.from_json(e) for e in d["entries"]),
                uncapped_freq=float(d["uncapped_freq_mhz"]),
                uncapped_runtime=float(d["uncapped_runtime_s"]),
                profiling_times=None if times is None else {float(k): float(v) for k, v in times.items()},
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidRecord(f"malformed scaling profile: {e!r}") from None


def _freq_key(f: float) -> str:
    return str(int(f)) if float(f).is_integer() else repr(float(f))


@dataclass(frozen=True)
class WorkloadRecord:
    features: WorkloadFeatures
    profile: ScalingProfile
    largest: bool = False

    @property
    def summary(self) -> PowerSummary:
        return self.features.summary

    @property
    def utilization(self) -> UtilizationPoint | None:
        return self.features.utilization

    def to_json(self) -> dict:
        f = self.features
        return {
            "workload": f.workload,
            "config": f.config,
            "largest": self.largest,
            "device_tdp_w": f.device_tdp,
            "spike_ticks": list(f.spike_ticks),
            "summary": f.summary.to_json(),
            "utilization": None if f.utilization is None else f.utilization.to_json(),
            "profile": self.profile.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "WorkloadRecord":
        return cls(WorkloadFeatures.from_json(d), ScalingProfile.from_json(d["profile"]),
                   bool(d.get("largest", False)))


def record_id(features: WorkloadFeatures) -> str:
    return f"{features.workload}/{features.config}" if features.config else features.workload


def app_of(workload_id: str) -> str:
    return workload_id.split("/", 1)[0]


@dataclass(frozen=True)
class ReferenceSet:
    device_tdp: float
    records: Mapping[str, WorkloadRecord] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "records", MappingProxyType(dict(sorted(self.records.items()))))

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, wid) -> bool:
        return wid in self.records

    def __getitem__(self, wid: str) -> WorkloadRecord:
        return self.records[wid]

    @property
    def ids(self) -> list[str]:
        return list(self.records)

    def without(self, wid: str) -> "ReferenceSet":
        return replace(self, records={k: v for k, v in self.records.items() if k != wid})

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "device_tdp_w": self.device_tdp,
            "workloads": {k: r.to_json() for k, r in self.records.items()},
        }

    @classmethod
    def from_json(cls, d: dict) -> "ReferenceSet":
        version = int(d.get("schema_version", 0))
        if version > SCHEMA_VERSION:
            raise UnsupportedSchema(f"reference set schema {version} is newer than supported {SCHEMA_VERSION}")
        if version < 1:
            raise UnsupportedSchema(f"invalid schema_version {version}")
        recs = {k: WorkloadRecord.from_json(v) for k, v in d["workloads"].items()}
        return cls(float(d["device_tdp_w"]), recs, version)


def refset_add(rs: ReferenceSet, workload_id: str, record: WorkloadRecord) -> ReferenceSet:
    if workload_id in rs.records:
        raise Conflict(f"workload {workload_id!r} already in the reference set")
    if record.profile is None:
        raise InvalidRecord(f"{workload_id}: a scaling profile is required")
    recs = dict(rs.records)
    recs[workload_id] = record
    return replace(rs, records=recs)


def refset_remove(rs: ReferenceSet, workload_id: str) -> ReferenceSet:
    if workload_id not in rs.records:
        raise KeyError(workload_id)
    return rs.without(workload_id)


def refset_materialize_vectors(rs: ReferenceSet, bin_width: float) -> dict[str, SpikeVector]:
    check_bin_width(bin_width)
    return {k: build_spike_vector(r.features.magnitudes, bin_width, r.features.device_tdp)
            for k, r in rs.records.items()}


def refset_one_input_per_workload(rs: ReferenceSet) -> ReferenceSet:
    """Keep one config per application: the only one, or the one flagged largest."""
    by_app: dict[str, list[str]] = {}
    for wid in rs.records:
        by_app.setdefault(app_of(wid), []).append(wid)
    keep = {}
    for app, wids in by_app.items():
        if len(wids) == 1:
            keep[wids[0]] = rs.records[wids[0]]
            continue
        flagged = [w for w in wids if rs.records[w].largest]
        if len(flagged) != 1:
            raise AmbiguousSelection(
                f"application {app!r} has {len(wids)} configs and {len(flagged)} flagged largest")
        keep[flagged[0]] = rs.records[flagged[0]]
    return replace(rs, records=keep)


def dumps_refset(rs: ReferenceSet) -> str:
    return json.dumps(rs.to_json(), indent=1, sort_keys=True, allow_nan=False) + "\n"


def save_refset(rs: ReferenceSet, path) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(dumps_refset(rs))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_refset(path) -> ReferenceSet:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", str(path), e.lineno) from None
    try:
        return ReferenceSet.from_json(d)
    except (KeyError, TypeError) as e:
        raise ParseError(f"malformed reference set: {e!r}", str(path)) from None

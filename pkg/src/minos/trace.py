"""Telemetry ingest: energy counters -> instantaneous power -> filtered, trimmed trace.

Units are fixed at the file boundary: timestamps in microseconds, energy in
microjoules, power in watts (uJ / us == W).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CounterRegression,
    InsufficientData,
    InvalidParameter,
    InvalidRecord,
    NoActivity,
    ParseError,
)

ENERGY_HEADER = ("timestamp_us", "energy_uj", "activity")
POWER_HEADER = ("timestamp_us", "power_w", "activity")
DEFAULT_ALPHA = 0.5
COUNTER_MODULUS = 2**64


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _counter_array(values) -> np.ndarray:
    """Integer counters stay exact as uint64 (float64 loses precision past 2^53)."""
    if isinstance(values, np.ndarray):
        ints = values.dtype.kind in "iu"
    else:
        values = list(values)
        ints = all(isinstance(v, (int, np.integer)) for v in values)
    if not ints:
        return _frozen(values)
    as_int = [int(v) for v in values]
    if as_int and min(as_int) < 0:
        raise InvalidRecord("energy counter must be non-negative")
    return _frozen(as_int, np.uint64)


@dataclass(frozen=True)
class RawSampleSeries:
    """Samples as recorded. Exactly one of ``energy_uj`` / ``power_w`` is set.

    ``activity`` is the busy-cycle count per sampling interval; ``None`` when
    the source format has no activity column (trimming is then skipped).
    """

    timestamps_us: np.ndarray
    device_tdp: float
    energy_uj: np.ndarray | None = None
    power_w: np.ndarray | None = None
    activity: np.ndarray | None = None

    def __post_init__(self):
        ts = _frozen(self.timestamps_us)
        object.__setattr__(self, "timestamps_us", ts)
        if (self.energy_uj is None) == (self.power_w is None):
            raise InvalidRecord("exactly one of energy_uj / power_w must be given")
        for name in ("energy_uj", "power_w"):
            v = getattr(self, name)
            if v is not None:
                v = _counter_array(v) if name == "energy_uj" else _frozen(v)
                if v.shape != ts.shape:
                    raise InvalidRecord(f"{name} length {v.size} != timestamps length {ts.size}")
                object.__setattr__(self, name, v)
        if self.activity is not None:
            act = _frozen(self.activity, np.int64)
            if act.shape != ts.shape:
                raise InvalidRecord("activity length does not match timestamps")
            if np.any(act < 0):
                raise InvalidRecord("activity counts must be non-negative")
            object.__setattr__(self, "activity", act)
        if not (self.device_tdp > 0 and math.isfinite(self.device_tdp)):
            raise InvalidRecord(f"device_tdp must be > 0, got {self.device_tdp}")
        if ts.size >= 2 and np.any(np.diff(ts) <= 0):
            raise InvalidRecord("timestamps must be strictly increasing")
        if self.power_w is not None and np.any(self.power_w < 0):
            raise InvalidRecord("pre-derived power must be non-negative")

    def __len__(self) -> int:
        return int(self.timestamps_us.size)

    @property
    def has_energy(self) -> bool:
        return self.energy_uj is not None


@dataclass(frozen=True)
class PowerTrace:
    """Analysis-ready filtered power. ``head_trimmed``/``tail_trimmed`` count
    samples removed from each end of the filtered series."""

    timestamps_us: np.ndarray
    power_w: np.ndarray
    device_tdp: float
    trimmed: bool = False
    head_trimmed: int = 0
    tail_trimmed: int = 0

    def __post_init__(self):
        ts = _frozen(self.timestamps_us)
        pw = _frozen(self.power_w)
        if ts.shape != pw.shape:
            raise InvalidRecord("timestamps and power must have equal length")
        if ts.size < 2:
            raise InsufficientData(f"trace needs at least 2 samples, got {ts.size}")
        if np.any(np.diff(ts) <= 0):
            raise InvalidRecord("timestamps must be strictly increasing")
        if np.any(pw < 0):
            raise InvalidRecord("filtered power must be non-negative")
        if not self.device_tdp > 0:
            raise InvalidRecord("device_tdp must be > 0")
        object.__setattr__(self, "timestamps_us", ts)
        object.__setattr__(self, "power_w", pw)

    def __len__(self) -> int:
        return int(self.power_w.size)

    @property
    def relative(self) -> np.ndarray:
        return self.power_w / self.device_tdp


def derive_power(raw: RawSampleSeries, unwrap: bool = False,
                 modulus: int = COUNTER_MODULUS) -> tuple[np.ndarray, np.ndarray]:
    """Per-interval power ``de/dt``, stamped at the later endpoint of each interval.

    A decreasing counter raises :class:`CounterRegression` unless ``unwrap`` is
    set, in which case ``modulus`` is added once per regression.
    """
    if raw.energy_uj is None:
        raise InvalidParameter("series carries pre-derived power; nothing to derive")
    if len(raw) < 2:
        raise InsufficientData(f"need at least 2 samples to difference, got {len(raw)}")
    e = raw.energy_uj
    bad = np.flatnonzero(e[1:] < e[:-1])
    if bad.size and not unwrap:
        i = int(bad[0])
        raise CounterRegression(
            f"energy counter decreased between samples {i} and {i + 1} "
            f"({e[i].item()!r} -> {e[i + 1].item()!r})"
        )
    if e.dtype == np.uint64:
        # unsigned subtraction wraps modulo 2^64 exactly
        de = (e[1:] - e[:-1]).astype(np.float64)
        if bad.size and modulus != COUNTER_MODULUS:
            de[bad] = [float(int(e[i + 1]) - int(e[i]) + modulus) for i in bad]
    else:
        de = np.diff(e)
        if bad.size:
            de[bad] += float(modulus)
    dt = np.diff(raw.timestamps_us)
    return raw.timestamps_us[1:].copy(), de / dt


def alpha_filter(power, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Two-tap smoother ``a*p[t] + (1-a)*p[t-1]`` over the *raw* previous sample.

    The first sample passes through unchanged.
    """
    if not (0.0 < alpha <= 1.0):
        raise InvalidParameter(f"alpha must be in (0, 1], got {alpha}")
    p = np.asarray(power, dtype=np.float64)
    if p.size == 0:
        raise InsufficientData("cannot filter an empty series")
    out = p.copy()
    if alpha != 1.0:
        out[1:] = alpha * p[1:] + (1.0 - alpha) * p[:-1]
    return out


def active_span(activity) -> tuple[int, int]:
    """Inclusive ``(first, last)`` indices with activity > 0."""
    nz = np.flatnonzero(np.asarray(activity) > 0)
    if nz.size == 0:
        raise NoActivity("no sample reports non-zero activity")
    return int(nz[0]), int(nz[-1])


def trim_idle(raw: RawSampleSeries, timestamps_us, power) -> PowerTrace:
    """Drop the idle head and tail; interior idle gaps are kept.

    ``power`` must be derived from ``raw``: either one sample shorter (differenced
    energy, aligned to the later endpoint) or equal length (pre-derived power).
    """
    ts = np.asarray(timestamps_us, dtype=np.float64)
    pw = np.asarray(power, dtype=np.float64)
    if raw.activity is None:
        return PowerTrace(ts, pw, raw.device_tdp, trimmed=False)
    n = pw.size
    if n not in (len(raw), len(raw) - 1):
        raise InvalidParameter("power series is not index-aligned with the raw series")
    act = raw.activity[len(raw) - n:]
    first, last = active_span(act)
    return PowerTrace(
        ts[first:last + 1],
        pw[first:last + 1],
        raw.device_tdp,
        trimmed=True,
        head_trimmed=first,
        tail_trimmed=n - 1 - last,
    )


def build_power_trace(raw: RawSampleSeries, alpha: float = DEFAULT_ALPHA,
                      unwrap: bool = False) -> PowerTrace:
    """derive (if needed) -> alpha filter -> trim idle head/tail."""
    if raw.has_energy:
        ts, p = derive_power(raw, unwrap=unwrap)
    else:
        ts, p = raw.timestamps_us, raw.power_w
        if p.size == 0:
            raise InsufficientData("empty trace")
    return trim_idle(raw, ts, alpha_filter(p, alpha))


# --- file formats -----------------------------------------------------------


@dataclass(frozen=True)
class TraceMeta:
    device_tdp_w: float
    workload: str
    config: str = ""
    freq_cap_mhz: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = {
            "device_tdp_w": self.device_tdp_w,
            "workload": self.workload,
            "config": self.config,
            "freq_cap_mhz": self.freq_cap_mhz,
        }
        d.update(self.extra)
        return d


def meta_path_for(trace_path) -> Path:
    p = Path(trace_path)
    return p.with_name(p.stem + ".meta.json")


def read_meta(path) -> TraceMeta:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", str(path), e.lineno) from None
    try:
        tdp = float(d["device_tdp_w"])
        workload = str(d["workload"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"missing or invalid field: {e}", str(path)) from None
    cap = d.get("freq_cap_mhz")
    known = {"device_tdp_w", "workload", "config", "freq_cap_mhz"}
    return TraceMeta(
        device_tdp_w=tdp,
        workload=workload,
        config=str(d.get("config", "")),
        freq_cap_mhz=None if cap is None else float(cap),
        extra={k: v for k, v in d.items() if k not in known},
    )


def write_meta(meta: TraceMeta, path) -> None:
    Path(path).write_text(json.dumps(meta.to_json(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def _num(text: str, path: str, line: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"column {col!r}: not a number: {text!r}", path, line) from None
    if not math.isfinite(v):
        raise ParseError(f"column {col!r}: non-finite value {text!r}", path, line)
    return v


def _counter(text: str, path: str, line: int) -> int | float:
    try:
        v = int(text)
    except ValueError:
        return _num(text, path, line, "energy_uj")
    if not 0 <= v < COUNTER_MODULUS:
        raise ParseError(f"energy counter {text!r} outside [0, 2^64)", path, line)
    return v


def read_trace_csv(path, device_tdp: float | None = None) -> RawSampleSeries:
    """Read either trace CSV layout; the header decides which.

    TDP comes from ``device_tdp`` or the sidecar ``<stem>.meta.json``. The
    activity column may be omitted entirely.
    """
    path = Path(path)
    spath = str(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file, expected a header row", spath, 1)
    header = tuple(h.strip() for h in rows[0])
    if header[:2] == ENERGY_HEADER[:2]:
        kind = "energy"
    elif header[:2] == POWER_HEADER[:2]:
        kind = "power"
    else:
        raise ParseError(f"unrecognized header {','.join(header)!r}", spath, 1)
    has_activity = len(header) >= 3 and header[2] == "activity"
    if len(header) not in (2, 3) or (len(header) == 3 and not has_activity):
        raise ParseError(f"unexpected columns {','.join(header)!r}", spath, 1)
    ts, vals, act = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", spath, lineno)
        ts.append(_num(row[0], spath, lineno, header[0]))
        vals.append(_counter(row[1], spath, lineno) if kind == "energy"
                    else _num(row[1], spath, lineno, header[1]))
        if has_activity:
            a = _num(row[2], spath, lineno, "activity")
            if a < 0 or a != int(a):
                raise ParseError(f"activity must be a non-negative integer, got {row[2]!r}",
                                 spath, lineno)
            act.append(int(a))
    if not ts:
        raise ParseError("no data rows", spath, 2)
    if device_tdp is None:
        mp = meta_path_for(path)
        if not mp.exists():
            raise ParseError(f"no TDP given and sidecar {mp.name} not found", spath)
        device_tdp = read_meta(mp).device_tdp_w
    for i in range(1, len(ts)):
        if ts[i] <= ts[i - 1]:
            raise ParseError("timestamps must be strictly increasing", spath, i + 2)
    if kind == "energy" and not all(isinstance(v, int) for v in vals):
        vals = [float(v) for v in vals]
    kw = {"energy_uj": vals} if kind == "energy" else {"power_w": vals}
    try:
        return RawSampleSeries(ts, device_tdp, activity=act if has_activity else None, **kw)
    except InvalidRecord as e:
        raise ParseError(str(e), spath) from None


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def write_trace_csv(raw: RawSampleSeries, path) -> None:
    header = ENERGY_HEADER if raw.has_energy else POWER_HEADER
    vals = raw.energy_uj if raw.has_energy else raw.power_w
    if raw.activity is None:
        header = header[:2]
    lines = [",".join(header)]
    for i in range(len(raw)):
        fields = [_fmt(raw.timestamps_us[i]), _fmt(vals[i])]
        if raw.activity is not None:
            fields.append(str(int(raw.activity[i])))
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

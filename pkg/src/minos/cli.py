"""``minos`` command line.

Every subcommand writes JSON/CSV only. Failures are reported on stderr as one
JSON object per line and exit with status 1.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from . import fixtures
from .cluster import classify_power, kmeans_fit, silhouette_sweep
from .errors import InvalidParameter, MinosError, ParseError
from .features import (
    WorkloadFeatures,
    cdf_points,
    check_bin_width,
    extract_features,
    read_kernels_csv,
    write_kernels_csv,
)
from .predict import (
    DEFAULT_CANDIDATES,
    Bounds,
    Objective,
    holdout_evaluate,
    select_optimal_freq,
    select_with_baseline,
)
from .refset import (
    ReferenceSet,
    ScalingProfile,
    WorkloadRecord,
    load_refset,
    record_id,
    refset_add,
    refset_materialize_vectors,
    refset_one_input_per_workload,
    save_refset,
)
from .synth import ScalingSpec, SynthSpec, synth_kernels, synth_profile, synth_trace
from .trace import TraceMeta, build_power_trace, meta_path_for, read_meta, read_trace_csv, write_meta, write_trace_csv

ENV_REFSET = "MINOS_REFSET"
GLOBAL_FLAGS = ("--refset", "--tdp-w", "--bin-width", "--objective", "--power-bound",
                "--perf-bound", "--percentile", "--min-freq-mhz", "--seed", "--out")


@dataclass(frozen=True)
class RunConfig:
    refset_path: Path | None
    tdp_w: float | None
    bin_width: float | None  # None = choose automatically
    objective: Objective
    bounds: Bounds
    seed: int
    out: Path | None

    @classmethod
    def from_args(cls, a: argparse.Namespace) -> "RunConfig":
        objective = Objective(a.objective)
        if a.percentile is not None and objective is Objective.PERF:
            raise InvalidParameter("--percentile only applies to --objective power")
        bw = None
        if a.bin_width not in (None, "auto"):
            try:
                bw = float(a.bin_width)
            except ValueError:
                raise InvalidParameter(f"--bin-width must be a number or 'auto', got {a.bin_width!r}") from None
            check_bin_width(bw)
        refset = a.refset or os.environ.get(ENV_REFSET)
        return cls(
            refset_path=Path(refset) if refset else None,
            tdp_w=a.tdp_w,
            bin_width=bw,
            objective=objective,
            bounds=Bounds(a.power_bound, a.perf_bound, a.percentile or 90, a.min_freq_mhz),
            seed=a.seed,
            out=Path(a.out) if a.out else None,
        )

    def require_refset(self) -> ReferenceSet:
        if self.refset_path is None:
            raise InvalidParameter(f"no reference set: pass --refset or set {ENV_REFSET}")
        return load_refset(self.refset_path)


def _global_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--refset", help=f"reference set file (*.minosref.json); falls back to ${ENV_REFSET}")
    g.add_argument("--tdp-w", type=float, help="override device TDP in watts")
    g.add_argument("--bin-width", default="auto", help="spike bin width c, or 'auto' (default)")
    g.add_argument("--objective", choices=[o.value for o in Objective], default="power")
    g.add_argument("--power-bound", type=float, default=1.3, help="power bound, multiple of TDP (default 1.3)")
    g.add_argument("--perf-bound", type=float, default=5.0, help="allowed degradation in percent (default 5)")
    g.add_argument("--percentile", type=int, choices=[90, 95, 99], default=None,
                   help="power percentile to bound (default 90)")
    g.add_argument("--min-freq-mhz", type=float, default=None,
                   help="lowest cap the perf objective may pick (default 0.6 x f_max)")
    g.add_argument("--seed", type=int, default=0, help="seed for K-means initialisation (default 0)")
    g.add_argument("--out", help="output directory (default: stdout)")
    return p


# --- output helpers ---------------------------------------------------------


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(cfg: RunConfig, name: str, obj) -> None:
    text = obj if isinstance(obj, str) else _dumps(obj)
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / name).write_text(text, encoding="utf-8")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _load_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", str(path), e.lineno) from None


def _features_from_trace(path: Path, cfg: RunConfig, kernels: Path | None, alpha: float,
                         unwrap: bool) -> WorkloadFeatures:
    mp = meta_path_for(path)
    meta = read_meta(mp) if mp.exists() else None
    tdp = cfg.tdp_w or (meta.device_tdp_w if meta else None)
    raw = read_trace_csv(path, tdp)
    trace = build_power_trace(raw, alpha=alpha, unwrap=unwrap)
    if kernels is None:
        side = path.with_name(path.stem + ".kernels.csv")
        kernels = side if side.exists() else None
    krecs = read_kernels_csv(kernels) if kernels else None
    workload = meta.workload if meta else path.stem
    config = meta.config if meta else ""
    return extract_features(trace, workload, config, krecs)


def _load_target(a, cfg: RunConfig) -> WorkloadFeatures:
    if a.features:
        return WorkloadFeatures.from_json(_load_json(a.features))
    return _features_from_trace(Path(a.trace), cfg, Path(a.kernels) if a.kernels else None,
                                a.alpha, a.unwrap)


def _display_width(cfg: RunConfig) -> float:
    return cfg.bin_width if cfg.bin_width is not None else 0.1


# --- commands ---------------------------------------------------------------


def cmd_ingest(a, cfg: RunConfig) -> None:
    if a.kernels and len(a.traces) > 1:
        raise InvalidParameter("--kernels applies to a single trace; use <stem>.kernels.csv sidecars")
    docs = []
    for t in a.traces:
        path = Path(t)
        feats = _features_from_trace(path, cfg, Path(a.kernels) if a.kernels else None,
                                     a.alpha, a.unwrap)
        doc = feats.to_json(_display_width(cfg))
        if cfg.out is not None:
            _emit(cfg, path.stem + ".features.json", doc)
        docs.append(doc)
    if cfg.out is None:
        sys.stdout.write(_dumps(docs[0] if len(docs) == 1 else docs))


def cmd_cluster(a, cfg: RunConfig) -> None:
    rs = cfg.require_refset()
    if a.mode == "power":
        vecs = refset_materialize_vectors(rs, _display_width(cfg))
        dendro, classes = classify_power(vecs, a.threshold, a.linkage)
        doc = {
            "mode": "power",
            "bin_width": _display_width(cfg),
            "linkage": a.linkage,
            "threshold": a.threshold,
            "dendrogram": dendro.to_json() if dendro else [],
            "classes": classes,
        }
    else:
        pts = {k: r.utilization for k, r in rs.records.items() if r.utilization is not None}
        scores = None
        k = a.k
        if k is None:
            k, scores = silhouette_sweep(pts, a.k_min, a.k_max, cfg.seed)
        model = kmeans_fit(pts, k, cfg.seed)
        doc = {"mode": "util", "kmeans": model.to_json(),
               "silhouette_scores": None if scores is None else {str(kk): v for kk, v in scores.items()}}
    _emit(cfg, f"cluster_{a.mode}.json", doc)


def cmd_refset(a, cfg: RunConfig) -> None:
    if cfg.refset_path is None:
        raise InvalidParameter(f"no reference set: pass --refset or set {ENV_REFSET}")
    path = cfg.refset_path
    if a.refset_cmd == "add":
        feats = WorkloadFeatures.from_json(_load_json(a.features))
        prof = ScalingProfile.from_json(_load_json(a.profile))
        rs = load_refset(path) if path.exists() else ReferenceSet(cfg.tdp_w or feats.device_tdp)
        wid = a.id or record_id(feats)
        rs = refset_add(rs, wid, WorkloadRecord(feats, prof, a.largest))
        save_refset(rs, path)
        sys.stdout.write(_dumps({"added": wid, "count": len(rs)}))
    elif a.refset_cmd == "list":
        rs = load_refset(path)
        rows = [[wid, r.features.config, int(r.largest), len(r.features.spike_ticks),
                 repr(r.summary.p90_rel_tdp),
                 "" if r.utilization is None else repr(r.utilization.app_sm_util),
                 "" if r.utilization is None else repr(r.utilization.app_dram_util),
                 repr(r.profile.uncapped_freq)] for wid, r in rs.records.items()]
        _emit(cfg, "refset.csv", _csv_text(["workload", "config", "largest", "spikes", "p90_rel_tdp",
                                            "app_sm_util", "app_dram_util", "uncapped_freq_mhz"], rows))
    elif a.refset_cmd == "filter-largest":
        rs = refset_one_input_per_workload(load_refset(path))
        dest = Path(a.output) if a.output else (cfg.out / path.name if cfg.out else None)
        if dest is None:
            raise InvalidParameter("filter-largest needs --output or --out")
        save_refset(rs, dest)
        sys.stdout.write(_dumps({"kept": rs.ids, "output": str(dest)}))


def cmd_predict(a, cfg: RunConfig) -> None:
    rs = cfg.require_refset()
    target = _load_target(a, cfg)
    rec = select_optimal_freq(target, rs, cfg.objective, cfg.bounds, cfg.bin_width,
                              exclude=a.exclude, same_cluster=a.same_cluster, seed=cfg.seed)
    doc = rec.to_json()
    if a.baseline:
        base = select_with_baseline(target, rs, cfg.objective, cfg.bounds, exclude=a.exclude)
        doc["baseline"] = base.to_json()
    _emit(cfg, f"predict_{rec.workload.replace('/', '_')}.json", doc)


def cmd_holdout(a, cfg: RunConfig) -> None:
    rs = cfg.require_refset()
    if not a.all_inputs:
        rs = refset_one_input_per_workload(rs)
    bins = None
    if a.distance_bins:
        bins = [float(x) for x in a.distance_bins.split(",")]
    rep = holdout_evaluate(rs, cfg.objective, cfg.bounds, bins, cfg.bin_width,
                           DEFAULT_CANDIDATES, a.same_cluster, cfg.seed)
    _emit(cfg, "evaluation.json", rep.to_json())
    if cfg.out is not None:
        _emit(cfg, "pairs.csv", pairs_csv(rep.to_json()))


def pairs_csv(evaluation: dict) -> str:
    rows = [[r["workload"], r["neighbor"], repr(r["distance"]), repr(r["chosen_freq_mhz"]),
             repr(r["observed"]), repr(r["error"]), r["baseline_neighbor"],
             repr(r["baseline_freq_mhz"]), repr(r["baseline_error"])]
            for r in evaluation["per_workload"]]
    return _csv_text(["workload", "neighbor", "distance", "chosen_freq_mhz", "observed", "error",
                      "baseline_neighbor", "baseline_freq_mhz", "baseline_error"], rows)


def _synth_spec_from_json(d: dict) -> SynthSpec:
    d = dict(d)
    d.pop("utilization", None)
    sc = d.pop("scaling", None)
    if sc is not None:
        if "grid" in sc:
            sc["grid"] = tuple(float(x) for x in sc["grid"])
        d["scaling"] = ScalingSpec(**sc)
    d["occupancies"] = tuple(d["occupancies"])
    return SynthSpec(**d)


def cmd_synth(a, cfg: RunConfig) -> None:
    if cfg.out is None:
        raise InvalidParameter("synth writes files; pass --out DIR")
    cfg.out.mkdir(parents=True, exist_ok=True)
    if a.fixture:
        _write_fixture(a.fixture, cfg.out)
        return
    if not a.spec:
        raise InvalidParameter("synth needs --spec FILE or --fixture NAME")
    d = _load_json(a.spec)
    try:
        spec = _synth_spec_from_json(d)
    except TypeError as e:
        raise ParseError(f"bad synth spec: {e}", a.spec) from None
    stem = spec.workload + (f"_{spec.config}" if spec.config else "")
    raw = synth_trace(spec)
    write_trace_csv(raw, cfg.out / f"{stem}.csv")
    write_meta(TraceMeta(spec.tdp, spec.workload, spec.config, None), cfg.out / f"{stem}.meta.json")
    if "utilization" in d:
        from .features import UtilizationPoint
        pt = UtilizationPoint(*map(float, d["utilization"]))
        write_kernels_csv(synth_kernels(pt, seed=spec.seed), cfg.out / f"{stem}.kernels.csv")
    if spec.scaling is not None:
        prof = synth_profile(spec, record_id_for(spec))
        (cfg.out / f"{stem}.profile.json").write_text(_dumps(prof.to_json()), encoding="utf-8")


def record_id_for(spec: SynthSpec) -> str:
    return f"{spec.workload}/{spec.config}" if spec.config else spec.workload


FIXTURES = ("case-study", "perfect", "isolated", "baseline")


def _write_fixture(name: str, out: Path) -> None:
    targets = {}
    if name == "case-study":
        rs, tmap = fixtures.case_study()
        targets = {k: v for k, v in tmap.items()}
    elif name == "perfect":
        rs = fixtures.perfect_neighbor_set()
    elif name == "isolated":
        rs = fixtures.perfect_neighbor_set(isolate=True)
    elif name == "baseline":
        rs, t = fixtures.baseline_separation_set()
        targets = {"new-bursty": t}
    else:
        raise InvalidParameter(f"unknown fixture {name!r}")
    save_refset(rs, out / f"{name}.minosref.json")
    for k, rec in targets.items():
        (out / f"{k}.features.json").write_text(_dumps(rec.features.to_json()), encoding="utf-8")
        (out / f"{k}.profile.json").write_text(_dumps(rec.profile.to_json()), encoding="utf-8")


def cmd_report(a, cfg: RunConfig) -> None:
    if cfg.out is None:
        raise InvalidParameter("report writes files; pass --out DIR")
    for fpath in a.features or []:
        feats = WorkloadFeatures.from_json(_load_json(fpath))
        if not feats.spike_ticks:
            continue
        pts = cdf_points(feats.magnitudes)
        _emit(cfg, f"cdf_{record_id(feats).replace('/', '_')}.csv",
              _csv_text(["rel_power", "cumulative_fraction"], [[repr(x), repr(y)] for x, y in pts]))
    if cfg.refset_path is not None:
        rs = load_refset(cfg.refset_path)
        rows = [[wid, repr(e.freq_mhz), repr(e.p90_rel_tdp), repr(e.p95_rel_tdp), repr(e.p99_rel_tdp),
                 repr(e.perf_degradation)]
                for wid, r in rs.records.items() for e in r.profile.entries]
        _emit(cfg, "scaling_curves.csv", _csv_text(
            ["workload", "freq_mhz", "p90_rel_tdp", "p95_rel_tdp", "p99_rel_tdp", "perf_degradation_pct"], rows))
        rows = [[wid, repr(r.summary.mean_rel_tdp), repr(r.summary.p90_rel_tdp), repr(r.summary.p95_rel_tdp),
                 repr(r.summary.p99_rel_tdp), repr(r.summary.max_rel_tdp)] for wid, r in rs.records.items()]
        _emit(cfg, "power_summary.csv", _csv_text(
            ["workload", "mean_rel_tdp", "p90_rel_tdp", "p95_rel_tdp", "p99_rel_tdp", "max_rel_tdp"], rows))
        if a.bin_sizes:
            from .predict import bin_size_errors
            errs = bin_size_errors(rs, DEFAULT_CANDIDATES, cfg.bounds.percentile)
            ref = errs.get(0.1)
            _emit(cfg, "bin_size_errors.csv", _csv_text(
                ["bin_width", "mean_err", "normalized_to_0.1"],
                [[repr(c), repr(e), "" if not ref else repr(e / ref)] for c, e in errs.items()]))
    if a.evaluation:
        ev = _load_json(a.evaluation)
        rows = [[repr(h["lo"]), "inf" if h["hi"] is None else repr(h["hi"]), h["count"],
                 "" if h["mean_error"] is None else repr(h["mean_error"])] for h in ev["histogram"]]
        _emit(cfg, "error_histogram.csv", _csv_text(["distance_lo", "distance_hi", "count", "mean_error"], rows))
        _emit(cfg, "pairs.csv", pairs_csv(ev))


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _global_parser()
    p = argparse.ArgumentParser(
        prog="minos",
        description="GPU power-spike classification and frequency-cap recommendation.",
        epilog="global options (accepted by every subcommand): " + " ".join(GLOBAL_FLAGS),
    )
    sub = p.add_subparsers(dest="command", required=True)

    def trace_opts(sp):
        sp.add_argument("--kernels", help="kernel counters CSV (default: <stem>.kernels.csv if present)")
        sp.add_argument("--alpha", type=float, default=0.5, help="filter coefficient (default 0.5)")
        sp.add_argument("--unwrap", action="store_true", help="unwrap 64-bit energy counter rollover")

    sp = sub.add_parser("ingest", parents=[common], help="trace CSV -> feature JSON")
    sp.add_argument("traces", nargs="+")
    trace_opts(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("cluster", parents=[common], help="dendrogram or K-means over the reference set")
    sp.add_argument("--mode", choices=["power", "util"], default="power")
    sp.add_argument("--threshold", type=float, default=0.72, help="dendrogram cut distance (default 0.72)")
    sp.add_argument("--linkage", choices=["ward", "average", "complete"], default="ward")
    sp.add_argument("--k", type=int, default=None, help="fixed K (default: silhouette sweep)")
    sp.add_argument("--k-min", type=int, default=3)
    sp.add_argument("--k-max", type=int, default=17)
    sp.set_defaults(func=cmd_cluster)

    sp = sub.add_parser("refset", help="manage the reference set")
    rsub = sp.add_subparsers(dest="refset_cmd", required=True)
    r = rsub.add_parser("add", parents=[common], help="add a profiled workload")
    r.add_argument("--features", required=True)
    r.add_argument("--profile", required=True)
    r.add_argument("--largest", action="store_true", help="mark as the largest input of its application")
    r.add_argument("--id", help="workload id (default app/config)")
    rsub.add_parser("list", parents=[common], help="one CSV row per workload")
    r = rsub.add_parser("filter-largest", parents=[common], help="keep one input per application")
    r.add_argument("--output")
    sp.set_defaults(func=cmd_refset)

    sp = sub.add_parser("predict", parents=[common], help="recommend a frequency cap")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--features")
    src.add_argument("--trace")
    trace_opts(sp)
    sp.add_argument("--exclude", help="ignore this reference id")
    sp.add_argument("--same-cluster", action="store_true",
                    help="restrict the utilization neighbour to the target's K-means cluster")
    sp.add_argument("--baseline", action="store_true", help="also report the mean-power baseline")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("holdout", parents=[common], help="hold-one-out evaluation")
    sp.add_argument("--distance-bins", help="comma-separated bin edges")
    sp.add_argument("--all-inputs", action="store_true", help="skip the one-input-per-application filter")
    sp.add_argument("--same-cluster", action="store_true")
    sp.set_defaults(func=cmd_holdout)

    sp = sub.add_parser("synth", parents=[common], help="generate synthetic traces or fixture sets")
    sp.add_argument("--spec", help="synthesis spec JSON")
    sp.add_argument("--fixture", choices=FIXTURES)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("report", parents=[common], help="plot-ready CSVs")
    sp.add_argument("--features", nargs="*")
    sp.add_argument("--evaluation")
    sp.add_argument("--bin-sizes", action="store_true", help="emit mean error per candidate bin width")
    sp.set_defaults(func=cmd_report)
    return p


def _error_record(exc: BaseException) -> dict:
    d = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ParseError):
        d["file"] = exc.path
        d["line"] = exc.line
    elif isinstance(exc, OSError) and exc.filename:
        d["file"] = str(exc.filename)
    return d


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_args(args)
        args.func(args, cfg)
    except (MinosError, OSError) as e:
        sys.stderr.write(json.dumps(_error_record(e), sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

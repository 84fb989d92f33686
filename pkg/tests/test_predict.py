import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minos import fixtures
from minos.cluster import NeighborResult
from minos.errors import InsufficientData, InvalidParameter, NoFeasibleCap
from minos.features import PowerSummary, UtilizationPoint
from minos.predict import (
    DEFAULT_CANDIDATES,
    Bounds,
    Objective,
    baseline_mean_power_neighbor,
    cap_perf_centric,
    cap_power_centric,
    choose_bin_size,
    distance_histogram,
    holdout_evaluate,
    prediction_error_perf,
    prediction_error_power,
    profiling_savings,
    select_optimal_freq,
    select_with_baseline,
)
from minos.refset import ProfileEntry, ReferenceSet, ScalingProfile, WorkloadRecord, refset_add
from minos.synth import ScalingSpec, features_from_magnitudes, synth_profile

GRID = (1300.0, 1500.0, 1700.0, 1900.0, 2100.0)


def profile_from(p90s, degs, grid=GRID, name="p"):
    entries = tuple(ProfileEntry(f, p, p + 0.01, p + 0.02, d) for f, p, d in zip(grid, p90s, degs))
    return ScalingProfile(name, entries, grid[-1], 100.0)


monotone_p90 = st.lists(st.floats(0.3, 2.0), min_size=5, max_size=5).map(sorted)
falling_deg = st.lists(st.floats(0, 30), min_size=4, max_size=4).map(
    lambda xs: sorted(xs, reverse=True) + [0.0])


# --- caps -------------------------------------------------------------------


def test_case_study_curves_cross_where_stated():
    rs, _ = fixtures.case_study()
    fmax = rs["SD-XL"].profile.uncapped_freq
    assert cap_power_centric(rs["SD-XL"].profile) == 1300 == round(0.6 * fmax, -2)
    assert cap_power_centric(rs["MILC-24"].profile) == 1500 == round(0.7 * fmax, -2)
    assert cap_perf_centric(rs["DeePMD-Water"].profile, 5, 0.6 * fmax) == 1900 == round(0.9 * fmax, -2)
    assert cap_perf_centric(rs["SD-XL"].profile, 5, 0.6 * fmax) == fmax


def test_power_cap_all_below_is_uncapped():
    assert cap_power_centric(profile_from([1.0] * 5, [4, 3, 2, 1, 0])) == 2100


def test_power_bound_is_strict():
    p = profile_from([1.0, 1.2, 1.3, 1.4, 1.5], [0] * 5)
    assert cap_power_centric(p, 1.3) == 1500


def test_power_cap_infeasible():
    with pytest.raises(NoFeasibleCap):
        cap_power_centric(profile_from([1.4] * 5, [0] * 5))


def test_perf_cap_zero_degradation_is_grid_min():
    assert cap_perf_centric(profile_from([1] * 5, [0] * 5)) == 1300


def test_perf_bound_is_inclusive_and_floored():
    p = profile_from([1] * 5, [8, 5, 3, 1, 0])
    assert cap_perf_centric(p, 5) == 1500
    assert cap_perf_centric(p, 5, floor_mhz=1600) == 1700
    with pytest.raises(NoFeasibleCap):
        cap_perf_centric(profile_from([1] * 5, [9, 8, 7, 6, 0]), 5, floor_mhz=2200)


@given(monotone_p90, st.floats(0.5, 2.5), st.sampled_from([90, 95, 99]))
def test_power_cap_matches_scan(p90s, bound, pct):
    p = profile_from(p90s, [0] * 5)
    ok = [e.freq_mhz for e in p.entries if e.percentile(pct) < bound]
    if ok:
        assert cap_power_centric(p, bound, pct) == max(ok)
    else:
        with pytest.raises(NoFeasibleCap):
            cap_power_centric(p, bound, pct)


@given(falling_deg, st.floats(0, 40))
def test_perf_cap_matches_scan(degs, bound):
    p = profile_from([1] * 5, degs)
    assert cap_perf_centric(p, bound) == min(e.freq_mhz for e in p.entries if e.perf_degradation <= bound)


@given(monotone_p90, st.floats(0.5, 2.0), st.floats(0.5, 2.0))
def test_power_cap_monotone_in_bound(p90s, b1, b2):
    lo, hi = sorted((b1, b2))
    p = profile_from(p90s, [0] * 5)
    try:
        f_lo = cap_power_centric(p, lo)
    except NoFeasibleCap:
        return
    assert cap_power_centric(p, hi) >= f_lo


@given(falling_deg, st.floats(0, 30), st.floats(0, 30))
def test_perf_cap_antitone_in_bound(degs, b1, b2):
    lo, hi = sorted((b1, b2))
    p = profile_from([1] * 5, degs)
    assert cap_perf_centric(p, hi) <= cap_perf_centric(p, lo)


# --- error metrics and savings ----------------------------------------------


def test_power_error_examples():
    assert prediction_error_power(1.3, 1.3) == 0
    assert prediction_error_power(1.365, 1.3) == pytest.approx(5.0)
    assert prediction_error_power(1.0, 1.3) == 0


def test_perf_error_examples():
    assert prediction_error_perf(5, 5) == 0
    assert prediction_error_perf(8, 5) == 3
    assert prediction_error_perf(0, 5) == 0


def test_savings_examples():
    assert profiling_savings({2100.0: 7.0}, 2100.0) == 0
    assert profiling_savings({float(f): 3.0 for f in range(10)}, 0.0) == pytest.approx(90.0, abs=1e-12)
    with pytest.raises(InvalidParameter):
        profiling_savings({1.0: 1.0}, 2.0)


@given(st.dictionaries(st.integers(1000, 2200).map(float), st.floats(1e-3, 1e4), min_size=1, max_size=20),
       st.data())
def test_savings_matches_formula(times, data):
    f0 = data.draw(st.sampled_from(sorted(times)))
    want = (1 - times[f0] / sum(times.values())) * 100
    assert profiling_savings(times, f0) == pytest.approx(want, rel=1e-12, abs=1e-12)


# --- neighbours -------------------------------------------------------------


def summary(mean):
    return PowerSummary(mean, mean, mean, mean, mean)


def refs_with_means(means):
    rs = ReferenceSet(750.0)
    for name, m in means.items():
        feats = features_from_magnitudes(name, [m] * 10, utilization=UtilizationPoint(1, 1))
        rs = refset_add(rs, name, WorkloadRecord(feats, synth_profile(ScalingSpec(1700.0), name)))
    return rs


def test_baseline_neighbor_examples():
    rs = refs_with_means({"lo": 0.8, "hi": 1.2})
    assert baseline_mean_power_neighbor(summary(0.9), rs).neighbor == "lo"
    assert baseline_mean_power_neighbor(summary(1.2), rs) == NeighborResult("hi", 0.0)
    with pytest.raises(InsufficientData):
        baseline_mean_power_neighbor(summary(1.0), ReferenceSet(750.0))


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.sampled_from("abcdefgh"), st.floats(0.5, 1.99), min_size=1), st.floats(0.5, 2.0))
def test_baseline_neighbor_matches_scan(means, target):
    rs = refs_with_means(means)
    got = baseline_mean_power_neighbor(summary(target), rs)
    want = min(sorted(rs.ids), key=lambda k: abs(rs[k].summary.mean_rel_tdp - target))
    assert got.neighbor == want


def test_choose_bin_size_single_candidate():
    rs, t = fixtures.case_study()
    f = t["FAISS"].features
    assert choose_bin_size(f.magnitudes, f.summary.p90_rel_tdp, rs, [0.25])[0] == 0.25


def test_choose_bin_size_empty_candidates():
    rs, t = fixtures.case_study()
    with pytest.raises(InvalidParameter):
        choose_bin_size(t["FAISS"].features.magnitudes, 1.0, rs, [])


def test_choose_bin_size_finds_distinguishing_width():
    # at c=0.1 the decoy ties the true generator and wins on id; only c=0.05 separates them
    true_mags = [0.52] * 500 + [0.57] * 500
    rs = ReferenceSet(750.0)
    for name, mags in (("a-decoy", [0.53] * 1000), ("generator", true_mags)):
        feats = features_from_magnitudes(name, mags, utilization=UtilizationPoint(1, 1))
        rs = refset_add(rs, name, WorkloadRecord(feats, synth_profile(ScalingSpec(1700.0), name)))
    target = features_from_magnitudes("t", true_mags)
    best, errs = choose_bin_size(target.magnitudes, target.summary.p90_rel_tdp, rs, [0.1, 0.05])
    assert best == 0.05 and errs[0.05] == 0 and errs[0.1] > 0


def test_default_candidates():
    assert DEFAULT_CANDIDATES == (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5)


# --- end to end -------------------------------------------------------------


@pytest.mark.parametrize("width", [0.1, None])
def test_case_study_power(width):
    rs, t = fixtures.case_study()
    b = Bounds()
    faiss = select_optimal_freq(t["FAISS"].features, rs, "power", b, width)
    qwen = select_optimal_freq(t["Qwen1.5-MoE"].features, rs, "power", b, width)
    assert (faiss.neighbor.neighbor, faiss.chosen_freq) == ("SD-XL", 1300)
    assert (qwen.neighbor.neighbor, qwen.chosen_freq) == ("MILC-24", 1500)
    own_faiss = t["FAISS"].profile.percentile_at(faiss.chosen_freq, 90)
    own_qwen = t["Qwen1.5-MoE"].profile.percentile_at(qwen.chosen_freq, 90)
    assert prediction_error_power(own_faiss) == 0
    assert prediction_error_power(own_qwen) == pytest.approx(5.0)
    assert faiss.chosen_freq in rs["SD-XL"].profile.freqs


def test_case_study_perf():
    rs, t = fixtures.case_study()
    faiss = select_optimal_freq(t["FAISS"].features, rs, Objective.PERF)
    qwen = select_optimal_freq(t["Qwen1.5-MoE"].features, rs, Objective.PERF)
    assert (faiss.neighbor.neighbor, faiss.chosen_freq) == ("SD-XL", 2100)
    assert (qwen.neighbor.neighbor, qwen.chosen_freq) == ("DeePMD-Water", 1900)
    assert faiss.to_json()["bin_width"] is None


def test_case_study_savings():
    _, t = fixtures.case_study()
    assert profiling_savings(t["FAISS"].profile.profiling_times, 2100.0) == pytest.approx(90.0)
    assert profiling_savings(t["Qwen1.5-MoE"].profile.profiling_times, 2100.0) == pytest.approx(89.0)


def test_target_present_in_refset_is_its_own_neighbor():
    rs = fixtures.perfect_neighbor_set()
    for wid in rs.ids:
        rec = select_optimal_freq(rs[wid].features, rs, bin_width=0.1)
        assert rec.neighbor.distance == 0
        assert rec.chosen_freq == cap_power_centric(rs[rec.neighbor.neighbor].profile)


def test_zero_spike_target_falls_back_to_utilization():
    rs, _ = fixtures.case_study()
    quiet = features_from_magnitudes("quiet", [], utilization=UtilizationPoint(11, 94), below=[0.3] * 50)
    rec = select_optimal_freq(quiet, rs)
    assert rec.neighbor.neighbor == "PageRank" and rec.bin_width is None
    assert any("utilization" in w for w in rec.warnings)


def test_infeasible_power_returns_grid_minimum():
    rs = ReferenceSet(750.0)
    hot = profile_from([1.5] * 5, [4, 3, 2, 1, 0], name="hot")
    feats = features_from_magnitudes("hot", [1.5] * 10, utilization=UtilizationPoint(1, 1))
    rs = refset_add(rs, "hot", WorkloadRecord(feats, hot))
    rec = select_optimal_freq(features_from_magnitudes("t", [1.5] * 10), rs, bin_width=0.1)
    assert rec.infeasible and rec.chosen_freq == 1300 and rec.to_json()["infeasible"] is True


def test_same_cluster_flag_restricts_util_neighbor():
    rs, t = fixtures.case_study()
    glob = select_optimal_freq(t["Qwen1.5-MoE"].features, rs, "perf")
    local = select_optimal_freq(t["Qwen1.5-MoE"].features, rs, "perf", same_cluster=True, k_util=3)
    assert glob.neighbor.neighbor == "DeePMD-Water"
    assert local.neighbor.distance >= glob.neighbor.distance


def test_recommendation_json_keys():
    rs, t = fixtures.case_study()
    d = select_optimal_freq(t["FAISS"].features, rs).to_json()
    assert {"workload", "objective", "chosen_freq_mhz", "neighbor", "bin_width", "bound",
            "predicted_value", "infeasible"} <= set(d)
    assert set(d["neighbor"]) == {"id", "distance"}


def test_baseline_agrees_when_neighbors_coincide():
    rs = fixtures.identical_set(3)
    tgt = rs["clone0"].features
    a = select_optimal_freq(tgt, rs, bin_width=0.1, exclude="clone0")
    b = select_with_baseline(tgt, rs, exclude="clone0")
    assert a.neighbor.neighbor == b.neighbor.neighbor
    assert (a.chosen_freq, a.predicted_value) == (b.chosen_freq, b.predicted_value)


# --- hold-one-out -----------------------------------------------------------


def test_identical_set_zero_error():
    for obj in ("power", "perf"):
        rep = holdout_evaluate(fixtures.identical_set(), obj)
        assert rep.mean_abs_error == 0


def test_perfect_set_zero_error():
    rs = fixtures.perfect_neighbor_set()
    assert holdout_evaluate(rs, "power").mean_abs_error == 0
    assert holdout_evaluate(rs, "perf").mean_abs_error == 0


def test_isolated_member_has_larger_error():
    rep = holdout_evaluate(fixtures.perfect_neighbor_set(isolate=True), "power")
    iso = rep.row("g4w2")
    rest = [abs(r.error) for r in rep.rows if r.workload != "g4w2"]
    assert iso.distance > 0.1 and iso.error > np.median(rest)


def test_aggregate_is_mean_of_rows_and_order_free():
    rs = fixtures.perfect_neighbor_set(isolate=True)
    rep = holdout_evaluate(rs, "power")
    assert rep.mean_abs_error == pytest.approx(np.mean([abs(r.error) for r in rep.rows]))
    shuffled = ReferenceSet(rs.device_tdp, dict(reversed(list(rs.records.items()))))
    assert holdout_evaluate(shuffled, "power").mean_abs_error == rep.mean_abs_error


def test_histogram_counts_sum_to_pairs():
    rep = holdout_evaluate(fixtures.perfect_neighbor_set(isolate=True), "power")
    assert sum(h.count for h in rep.histogram) == len(rep.rows) - rep.n_fallback


def test_histogram_edges():
    with pytest.raises(InvalidParameter):
        distance_histogram([], [0.1])
    bins = distance_histogram([], [0, 1, math.inf])
    assert [h.count for h in bins] == [0, 0]


def test_holdout_needs_two():
    rs = fixtures.identical_set(1)
    with pytest.raises(InsufficientData):
        holdout_evaluate(rs)


def test_baseline_separation():
    rs, tgt = fixtures.baseline_separation_set()
    b = Bounds()
    ours = select_optimal_freq(tgt.features, rs, "power", b)
    base = select_with_baseline(tgt.features, rs, "power", b)
    assert ours.neighbor.neighbor == "bursty" and base.neighbor.neighbor == "steady"
    err_ours = prediction_error_power(tgt.profile.percentile_at(ours.chosen_freq, 90))
    err_base = prediction_error_power(tgt.profile.percentile_at(base.chosen_freq, 90))
    assert err_base > err_ours
    # the two references really do collide on mean power
    assert abs(rs["bursty"].summary.mean_rel_tdp - rs["steady"].summary.mean_rel_tdp) < 0.01


def test_holdout_baseline_column_never_better_on_separation_set():
    rs, tgt = fixtures.baseline_separation_set()
    rep = holdout_evaluate(refset_add(rs, "new-bursty", tgt), "power")
    assert rep.baseline_mean_abs_error >= rep.mean_abs_error

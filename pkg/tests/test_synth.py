import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minos.errors import InvalidSpec
from minos.features import aggregate_utilization, UtilizationPoint, extract_features
from minos.predict import cap_perf_centric, cap_power_centric
from minos.synth import (
    ScalingSpec,
    SynthSpec,
    expected_vector,
    invert_filter,
    largest_remainder,
    perf_cap_closed_form,
    random_spec,
    synth_kernels,
    synth_profile,
    synth_trace,
)
from minos.trace import alpha_filter, build_power_trace


def one_hot(j, n=15):
    occ = [0.0] * n
    occ[j] = 1.0
    return tuple(occ)


def recovered(spec):
    tr = build_power_trace(synth_trace(spec))
    return tr, extract_features(tr, "s").spike_vector(spec.bin_width)


def test_one_hot_recovered_exactly():
    spec = SynthSpec(seed=1, occupancies=one_hot(7), sample_count=10_000)
    _, v = recovered(spec)
    assert v.counts[7] == 10_000 and v.total_spikes == 10_000


def test_idle_head_trimmed_exactly():
    spec = SynthSpec(seed=2, occupancies=one_hot(3), idle_head=50, idle_tail=20)
    tr, _ = recovered(spec)
    assert (tr.head_trimmed, tr.tail_trimmed) == (50, 20)


def test_idle_regions_are_quiet():
    spec = SynthSpec(seed=4, occupancies=one_hot(12), idle_head=30, idle_tail=30)
    raw = synth_trace(spec)
    assert np.all(raw.activity[1:31] == 0) and np.all(raw.activity[-30:] == 0)
    full = np.diff(raw.energy_uj.astype(float)) / np.diff(raw.timestamps_us) / spec.tdp
    assert np.all(alpha_filter(full)[:30] < 0.5) and np.all(alpha_filter(full)[-30:] < 0.5)


def test_deterministic():
    spec = random_spec(np.random.default_rng(9))
    a, b = synth_trace(spec), synth_trace(spec)
    np.testing.assert_array_equal(a.energy_uj, b.energy_uj)
    np.testing.assert_array_equal(a.timestamps_us, b.timestamps_us)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5]))
def test_round_trip_within_tolerance(seed, c):
    spec = random_spec(np.random.default_rng(seed), c)
    tr, v = recovered(spec)
    want = np.asarray(spec.occupancies)
    assert np.max(np.abs(v.values - want)) <= 1.0 / spec.sample_count
    assert v.counts == expected_vector(spec).counts
    assert (tr.head_trimmed, tr.tail_trimmed) == (spec.idle_head, spec.idle_tail)


def test_partial_spike_fraction():
    spec = SynthSpec(seed=5, occupancies=one_hot(0), sample_count=1000, spike_fraction=0.25)
    _, v = recovered(spec)
    assert v.total_spikes == 250


@given(st.lists(st.floats(0.1, 2.0), min_size=2, max_size=100).map(sorted))
def test_invert_filter_is_exact_inverse(target):
    np.testing.assert_allclose(alpha_filter(invert_filter(target)), target, rtol=1e-12)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20).filter(lambda x: sum(x) > 0),
       st.integers(0, 5000))
def test_largest_remainder_sums(frac, total):
    f = np.asarray(frac) / sum(frac)
    c = largest_remainder(f, total)
    assert c.sum() == total and np.all(np.abs(c - f * total) < 1 + 1e-9)


@pytest.mark.parametrize("kw", [
    dict(occupancies=one_hot(0, 14)),
    dict(occupancies=(0.5,) * 15),
    dict(occupancies=one_hot(0), sample_count=99),
    dict(occupancies=one_hot(0), noise_amplitude=0.06),
    dict(occupancies=one_hot(0), idle_level=0.6),
])
def test_invalid_specs(kw):
    with pytest.raises(InvalidSpec):
        SynthSpec(seed=0, **kw)


# --- profiles ---------------------------------------------------------------


@pytest.mark.parametrize("cross", [1300.0, 1500.0, 1700.0, 1900.0, 2100.0])
def test_profile_crosses_where_asked(cross):
    p = synth_profile(ScalingSpec(cross))
    assert cap_power_centric(p, 1.3) == cross
    p90 = [e.p90_rel_tdp for e in p.entries]
    assert p90 == sorted(p90)


def test_zero_slope_gives_floor():
    p = synth_profile(ScalingSpec(1500.0, 0.0))
    assert cap_perf_centric(p, 5.0) == 1300
    assert cap_perf_centric(p, 5.0, 1600.0) == 1700


def test_off_grid_crossing():
    with pytest.raises(InvalidSpec):
        synth_profile(ScalingSpec(1600.0))


@given(st.floats(0.0, 10.0), st.floats(0.0, 20.0), st.sampled_from([1300.0, 1400.0, 1700.0]))
def test_perf_cap_matches_closed_form(slope, bound, floor):
    s = ScalingSpec(1700.0, slope)
    p = synth_profile(s)
    assert cap_perf_centric(p, bound, floor) == perf_cap_closed_form(s, bound, floor)


def test_degradation_linear_and_zero_at_top():
    p = synth_profile(ScalingSpec(1500.0, 2.5))
    degs = [e.perf_degradation for e in p.entries]
    assert degs[-1] == 0
    np.testing.assert_allclose(np.diff(degs), [-5.0] * 4)


# --- kernels ----------------------------------------------------------------


@given(st.floats(0, 100), st.floats(0, 100), st.integers(0, 1000))
def test_kernels_hit_their_point(sm, dram, seed):
    u = aggregate_utilization(synth_kernels(UtilizationPoint(sm, dram), seed=seed))
    assert u.app_sm_util == pytest.approx(sm, abs=1e-9)
    assert u.app_dram_util == pytest.approx(dram, abs=1e-9)

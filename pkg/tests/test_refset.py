import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minos import fixtures
from minos.errors import AmbiguousSelection, Conflict, InvalidParameter, InvalidRecord, ParseError, UnsupportedSchema
from minos.features import UtilizationPoint, build_spike_vector, merge_adjacent
from minos.refset import (
    SCHEMA_VERSION,
    ProfileEntry,
    ReferenceSet,
    ScalingProfile,
    WorkloadRecord,
    dumps_refset,
    load_refset,
    refset_add,
    refset_materialize_vectors,
    refset_one_input_per_workload,
    refset_remove,
    save_refset,
)
from minos.synth import ScalingSpec, features_from_magnitudes, smooth_magnitudes, synth_profile


def record(name, mags, config="", largest=False, util=(50.0, 50.0), crossing=1700.0):
    feats = features_from_magnitudes(name, mags, config, UtilizationPoint(*util))
    return WorkloadRecord(feats, synth_profile(ScalingSpec(crossing), name), largest)


def twenty(seed=0):
    rng = np.random.default_rng(seed)
    rs = ReferenceSet(750.0)
    for i in range(20):
        mags = smooth_magnitudes(rng, rng.uniform(0.7, 1.8), 0.2, 300)
        rs = refset_add(rs, f"w{i:02d}", record(f"w{i:02d}", mags))
    return rs


# --- profiles ---------------------------------------------------------------


def entry(f, p90=1.0, deg=0.0):
    return ProfileEntry(f, p90, p90 + 0.01, p90 + 0.02, deg)


def test_profile_invariants():
    with pytest.raises(InvalidRecord, match="ascending"):
        ScalingProfile("x", (entry(1500), entry(1300)), 1300, 10)
    with pytest.raises(InvalidRecord, match="uncapped"):
        ScalingProfile("x", (entry(1300), entry(1500)), 2100, 10)
    with pytest.raises(InvalidRecord, match="must be 0"):
        ScalingProfile("x", (entry(1300), entry(1500, deg=1)), 1500, 10)
    with pytest.raises(InvalidRecord, match="below"):
        ScalingProfile("x", (entry(1300, deg=-1.5), entry(1500)), 1500, 10)
    # within the 1% noise tolerance
    ScalingProfile("x", (entry(1300, deg=-0.9), entry(1500)), 1500, 10)


def test_profile_json_round_trip():
    p = synth_profile(ScalingSpec(1500.0, 1.7), "w")
    d = p.to_json()
    assert set(d["entries"][0]) == {"freq_mhz", "p90_rel_tdp", "p95_rel_tdp", "p99_rel_tdp",
                                    "perf_degradation_pct"}
    assert ScalingProfile.from_json(json.loads(json.dumps(d))) == p


# --- add / remove / round trip ----------------------------------------------


def test_add_then_get_is_exact(tmp_path):
    rs = twenty()
    path = tmp_path / "r.minosref.json"
    save_refset(rs, path)
    back = load_refset(path)
    assert back == rs
    assert back["w03"] == rs["w03"]


def test_duplicate_add_conflicts():
    rs = twenty()
    with pytest.raises(Conflict):
        refset_add(rs, "w00", rs["w00"])


def test_remove_then_add_is_equivalent():
    rs = twenty()
    again = refset_add(refset_remove(rs, "w07"), "w07", rs["w07"])
    assert again == rs and dumps_refset(again) == dumps_refset(rs)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_store_load_round_trip(seed):
    rs = twenty(seed)
    assert ReferenceSet.from_json(json.loads(dumps_refset(rs))) == rs


def test_rebin_coarse_equals_merged_fine():
    rs = twenty(3)
    fine = refset_materialize_vectors(rs, 0.05)
    coarse = refset_materialize_vectors(rs, 0.1)
    for k in rs.ids:
        assert merge_adjacent(fine[k], 2).counts == coarse[k].counts


def test_materialize_fifteen_bins_and_one_hot():
    rs = refset_add(ReferenceSet(750.0), "a", record("a", [0.55] * 10))
    v = refset_materialize_vectors(rs, 0.1)["a"]
    assert v.n_bins == 15 and v.values[0] == 1.0


def test_materialize_matches_direct_build():
    rs = twenty(4)
    for k, v in refset_materialize_vectors(rs, 0.15).items():
        assert v == build_spike_vector(rs[k].features.magnitudes, 0.15, rs[k].features.device_tdp)


def test_materialize_rejects_bad_width():
    with pytest.raises(InvalidParameter):
        refset_materialize_vectors(twenty(), 0.0)


# --- one input per workload -------------------------------------------------


def test_single_configs_pass_through():
    rs = twenty()
    assert refset_one_input_per_workload(rs) == rs


def test_flagged_config_survives():
    rs = ReferenceSet(750.0)
    rs = refset_add(rs, "app/small", record("app", [0.6], "small"))
    rs = refset_add(rs, "app/big", record("app", [0.7], "big", largest=True))
    assert refset_one_input_per_workload(rs).ids == ["app/big"]


def test_unflagged_multi_config_is_ambiguous():
    rs = ReferenceSet(750.0)
    rs = refset_add(rs, "app/a", record("app", [0.6], "a"))
    rs = refset_add(rs, "app/b", record("app", [0.7], "b"))
    with pytest.raises(AmbiguousSelection):
        refset_one_input_per_workload(rs)


def test_catalog_reduces_to_eleven():
    rs = fixtures.catalog_18()
    assert len(rs) == 18
    kept = refset_one_input_per_workload(rs)
    assert len(kept) == 11
    assert len({k.split("/")[0] for k in kept.ids}) == 11


# --- file format ------------------------------------------------------------


def test_newer_schema_rejected(tmp_path):
    d = twenty().to_json()
    d["schema_version"] = SCHEMA_VERSION + 1
    p = tmp_path / "r.minosref.json"
    p.write_text(json.dumps(d))
    with pytest.raises(UnsupportedSchema):
        load_refset(p)


def test_bad_json_has_location(tmp_path):
    p = tmp_path / "r.minosref.json"
    p.write_text('{"schema_version": 1,\n "workloads": }')
    with pytest.raises(ParseError) as ei:
        load_refset(p)
    assert ei.value.line == 2


def test_save_is_byte_stable(tmp_path):
    rs = twenty()
    a, b = tmp_path / "a.minosref.json", tmp_path / "b.minosref.json"
    save_refset(rs, a)
    save_refset(load_refset(a), b)
    assert a.read_bytes() == b.read_bytes()
    assert not list(tmp_path.glob("*.tmp"))

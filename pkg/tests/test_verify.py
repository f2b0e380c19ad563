import json
import math

import numpy as np
import pytest

from dimentropy.entropy import estimate_dimensional_entropy
from dimentropy.exceptions import DegenerateTransversal, NoGap
from dimentropy.systems import get_system
from dimentropy.verify import (
    ExperimentReport,
    check_monotonicity,
    check_prop_equality,
    check_theorem_inequality,
    containment_violations,
    default_params,
    proof_pipeline,
    separation_violations,
    slice_family,
)


def test_report_relations():
    r = ExperimentReport("x", "s", {}, "ge", 0.6, 0.69, 0.1)
    assert r.recompute()
    r = ExperimentReport("x", "s", {}, "ge", 0.5, 0.69, 0.1)
    assert not r.recompute()
    r = ExperimentReport("x", "s", {}, "close", 0.6, 0.69, 0.1)
    assert r.recompute()
    r = ExperimentReport("x", "s", {}, "zero", 1.0, 0.0, 0.0)
    assert not r.recompute()
    r = ExperimentReport("x", "s", {}, "checks", 0.0, 0.0, 0.0, checks={"a": True, "b": False})
    assert not r.recompute()


def test_report_json_roundtrip():
    r = ExperimentReport("x", "s", {"deltas": [0.2]}, "ge", 0.6, 0.69, 0.1, measured={"arr": np.arange(3)})
    r.passed = r.recompute()
    doc = json.loads(r.to_json())
    assert doc["passed"] is True
    assert doc["measured"]["arr"] == [0, 1, 2]
    assert "PASS" in r.summary()


def test_default_params_per_system():
    assert default_params(get_system("doubling"))["ns"][-1] == 8
    assert default_params(get_system("henon"), budget=7)["budget"] == 7


def test_slicing_preserves_family():
    h = get_system("henon")
    est = estimate_dimensional_entropy(h, 1, 1, [0.1], [2], target_count=1, budget=40, keep_families=True)
    for fam in est.families.values():
        sliced = slice_family(fam)
        assert sliced.count == fam.count
        assert separation_violations(h, sliced) == 0
        assert containment_violations(h, sliced, fam.target) == 0


def test_monotonicity_doubling_extend():
    rep = check_monotonicity(get_system("doubling"), 0, 0, {"seed": 1, "ns": [2, 3, 4]}, "extend")
    assert rep.passed and rep.left == 0


def test_prop_doubling():
    rep = check_prop_equality(get_system("doubling"))
    assert rep.passed
    assert rep.measured["gap"] <= 0.1


def test_thm3_doubling():
    rep = check_theorem_inequality(get_system("doubling"), "thm3")
    assert rep.passed
    assert rep.slack <= 0.2


def test_thm2_needs_negative_block():
    # doubling has no negative exponents, so there is no block to subtract
    with pytest.raises(NoGap):
        check_theorem_inequality(get_system("doubling"), "thm2")


def test_pipeline_linear_exact():
    state, rep = proof_pipeline(get_system("diag:2,0.5"), "thm1", n=6, seed=0)
    assert rep.passed
    assert max(state.affine_deviation) <= 1e-9
    assert max(state.containment) <= 1e-9
    assert state.audit["center_equals_initial"]


def test_pipeline_doubling_points():
    state, rep = proof_pipeline(get_system("doubling"), "thm3", n=8, seed=0)
    assert rep.passed
    assert state.audit["z_count"] == state.occupancy
    assert state.audit["center_separation"] >= state.delta


def test_pipeline_is_deterministic():
    s = get_system("henon")
    _, a = proof_pipeline(s, "thm1", n=6, seed=2)
    _, b = proof_pipeline(s, "thm1", n=6, seed=2)
    da, db = a.to_dict(), b.to_dict()
    da.pop("runtime"), db.pop("runtime")
    assert da == db


def test_point_pipeline_refuses_invertible_map():
    # one preimage per point: nothing for the transversal to separate
    with pytest.raises(DegenerateTransversal):
        proof_pipeline(get_system("henon"), "thm3", n=6, seed=0)

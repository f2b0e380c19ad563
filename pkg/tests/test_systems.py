import math
from dataclasses import replace

import numpy as np
import pytest

from dimentropy.exceptions import NoBranchRule, OutOfDomain, SingularPoint
from dimentropy.systems import (
    REGISTRY_NAMES,
    ChartPoint,
    differential,
    evaluate,
    finite_difference_jacobian,
    get_system,
    inverse_images,
    iterate,
    locate,
    orbit_distance,
    orbit_distances,
    point_distance,
    set_distance,
)


@pytest.mark.parametrize("spec", ["doubling", "power:3", "henon", "henon:-1.2,0.2", "cat", "identity",
                                  "rotation:0.3", "linear:2,1,1,1", "diag:2,0.5", "product:doublingxdoubling"])
def test_registry_builds(spec):
    s = get_system(spec)
    assert s.k >= 1
    assert s.mode in ("real", "complex")


def test_unknown_system_lists_registry():
    with pytest.raises(KeyError) as exc:
        get_system("tent")
    msg = str(exc.value)
    for name in REGISTRY_NAMES:
        assert name in msg


def test_bad_parameters():
    with pytest.raises(KeyError):
        get_system("henon:1")


@pytest.mark.parametrize("spec", ["doubling", "power:3", "henon", "cat"])
def test_jacobian_matches_finite_differences(spec, rng):
    s = get_system(spec)
    z = s.sample(rng, 20)
    J = s.jacobian(z)
    Jfd = finite_difference_jacobian(s, z)
    assert np.allclose(J, Jfd, atol=1e-5)


@pytest.mark.parametrize("spec", ["doubling", "power:3", "henon", "cat"])
def test_inverse_branches_map_back(spec, rng):
    s = get_system(spec)
    x = s.sample(rng, 25)
    pre = s.inverse(x)
    assert pre.shape == (25, s.degree, s.k)
    for j in range(s.degree):
        img = s.map(pre[:, j])
        assert np.max(s.dist(img, x)) < 1e-9


def test_power_map_preimages_are_roots_of_unity(doubling):
    p = locate(doubling, [1.0 + 0j])
    pre = inverse_images(doubling, p)
    vals = sorted(complex(doubling.charts[q.chart_id].to_affine(q.coords)[0]).real for q in pre)
    assert np.allclose(vals, [-1.0, 1.0])


def test_evaluate_roundtrip_through_charts(henon):
    p = locate(henon, [0.3 + 0.1j, -0.2j])
    q = evaluate(henon, p)
    z = np.array([0.3 + 0.1j, -0.2j])
    expected = np.array([z[1] + z[0] ** 2 - 1.4, 0.3 * z[0]])
    assert np.allclose(henon.charts[q.chart_id].to_affine(q.coords), expected)
    assert np.allclose(differential(henon, p), henon.jacobian(z[None])[0])


def test_singular_point_rejected(doubling):
    with pytest.raises(SingularPoint):
        evaluate(doubling, locate(doubling, [0j]))


def test_out_of_chart_rejected(henon):
    with pytest.raises(OutOfDomain):
        evaluate(henon, ChartPoint(0, np.array([50.0 + 0j, 0j])))


def test_no_branch_rule(henon):
    s = replace(henon, inverse=None)
    with pytest.raises(NoBranchRule):
        inverse_images(s, locate(s, [0.2, 0.1]))


def test_distance_is_symmetric_and_periodic(cat):
    a = np.array([[0.01, 0.5]])
    b = np.array([[0.99, 0.5]])
    assert cat.dist(a, b)[0] == pytest.approx(0.02)
    assert cat.dist(b, a)[0] == pytest.approx(0.02)


def test_bowen_distance_matches_batch(henon, rng):
    z = henon.sample(rng, 2)
    n = 4
    emb, ok = iterate(henon, z, n)
    assert ok.all()
    batch = orbit_distances(henon, emb[0], emb[1])
    pa, pb = locate(henon, z[0]), locate(henon, z[1])
    assert orbit_distance(henon, pa, pb, n) == pytest.approx(float(batch), rel=1e-12)
    assert point_distance(henon, pa, pb) <= float(batch) + 1e-15


def test_doubling_bowen_distance_grows(doubling):
    a = np.array([[1.0 + 0j]])
    b = np.array([[np.exp(2j * np.pi * 1e-3)]])
    emb_a, _ = iterate(doubling, a, 8)
    emb_b, _ = iterate(doubling, b, 8)
    d = orbit_distances(doubling, emb_a, emb_b)[0]
    assert d == pytest.approx(abs(1 - np.exp(2j * np.pi * 1e-3 * 2**7)), rel=1e-9)


def test_set_distance():
    assert set_distance([0.0, 1.0], [3.0, 1.5]) == 0.5


def test_henon_determinant(henon, rng):
    z = henon.sample(rng, 10)
    det = np.linalg.det(henon.jacobian(z))
    assert np.allclose(det, -0.3)


def test_in_domain(henon):
    z = np.array([[0.0, 0.0], [100.0, 0.0]], dtype=complex)
    assert list(henon.in_domain(z)) == [True, False]


def test_reference_values(doubling, cubic):
    assert doubling.reference["h_top"] == pytest.approx(math.log(2))
    assert cubic.reference["h_top"] == pytest.approx(math.log(3))

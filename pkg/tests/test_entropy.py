import math
import warnings

import numpy as np
import pytest

from dimentropy.entropy import (
    EntropyEstimate,
    ball_patch,
    close_pairs,
    cube_select_target,
    enumerate_preimage_graphs,
    estimate_dimensional_entropy,
    estimate_htop,
    estimate_metric_entropy,
    estimate_pointwise_preimage_entropy,
    graph_distance,
    greedy_points,
    greedy_separated,
    leaf_embeddings,
    long_orbit,
    point_patch,
    preimage_tree,
    sample_admissible_targets,
)
from dimentropy.exceptions import EmptyInput, InsufficientOrbit, TreeBudgetExceeded
from dimentropy.graphs import in_X_m_delta, make_patch
from dimentropy.systems import iterate, orbit_distances

LOG2, LOG3 = math.log(2), math.log(3)


def _maximal(system, emb, fam, delta):
    """Every candidate lies within delta of some member."""
    members = emb[fam.order]
    for i in range(emb.shape[0]):
        if np.min(orbit_distances(system, members, emb[i][None])) >= delta:
            return False
    return True


# separated families ----------------------------------------------------------


@pytest.mark.parametrize("spec_fixture", ["doubling", "henon", "cat"])
def test_fast_greedy_matches_generic(spec_fixture, request, rng):
    system = request.getfixturevalue(spec_fixture)
    z = system.sample(rng, 300)
    emb, ok = iterate(system, z, 4)
    emb = emb[ok]
    delta = 0.15
    fast = greedy_points(system, emb, delta)
    slow = greedy_separated(list(range(emb.shape[0])), 4, delta,
                            lambda a, b: float(orbit_distances(system, emb[a], emb[b])))
    assert fast.items == slow.items
    assert fast.pairwise_min >= delta
    assert _maximal(system, emb, fast, delta)


def test_close_pairs_exact(henon, rng):
    emb, _ = iterate(henon, henon.sample(rng, 200), 3)
    pairs = close_pairs(henon, emb, 0.2)
    brute = {(i, j) for i in range(200) for j in range(i + 1, 200)
             if orbit_distances(henon, emb[i], emb[j]) < 0.2}
    assert {tuple(p) for p in pairs} == brute


# topological entropy ---------------------------------------------------------


def test_htop_doubling():
    est = estimate_htop(__import__("dimentropy").get_system("doubling"), [0.2, 0.1], [2, 4, 6, 8])
    assert est.extrapolated == pytest.approx(LOG2, abs=0.1)
    assert est.monotone_in_delta()


def test_htop_saturated_rows_excluded():
    est = EntropyEstimate("top", None, None, [(0.1, 2, 4), (0.1, 4, 16), (0.1, 6, 64), (0.1, 8, 70)],
                          diagnostics={"saturated": [[0.1, 8]]}).finalize()
    assert est.extrapolated == pytest.approx(LOG2)


def test_estimate_csv_format():
    est = EntropyEstimate("top", None, None, [(0.2, 2, 3), (0.2, 3, 0)]).finalize()
    lines = est.to_csv().splitlines()
    assert lines[0] == "quantity,m,l,delta,n,count,rate"
    assert lines[1] == "top,,,0.2,2,3,%.12g" % (math.log(3) / 2)
    assert lines[2].endswith(",0,-inf")
    assert est.to_dict()["rows"][1]["rate"] is None


# preimage entropy --------------------------------------------------------------


def test_preimage_tree_doubling(doubling):
    levels, parents = preimage_tree(doubling, [np.exp(0.3j)], 5)
    assert [lv.shape[0] for lv in levels] == [1, 2, 4, 8, 16, 32]
    emb = leaf_embeddings(levels, parents, 5)
    assert np.allclose(doubling.map(emb[:, 0]), emb[:, 1])
    with pytest.raises(TreeBudgetExceeded):
        preimage_tree(doubling, [1.0], 12, budget=100)


def test_pointwise_doubling_and_cubic(doubling, cubic):
    est = estimate_pointwise_preimage_entropy(doubling, [0.2, 0.1], [2, 4, 6, 8])
    assert est.extrapolated == pytest.approx(LOG2, abs=1e-9)
    est3 = estimate_pointwise_preimage_entropy(cubic, [0.2, 0.1], [2, 3, 4, 5, 6])
    assert est3.extrapolated == pytest.approx(LOG3, abs=0.05)


def test_pointwise_henon_is_zero(henon):
    est = estimate_pointwise_preimage_entropy(henon, [0.2, 0.1], [1, 2, 3, 4])
    assert all(c == 1 for (_, _, c) in est.rows)
    assert est.extrapolated == 0


# metric entropy --------------------------------------------------------------


def test_brin_katok_doubling(doubling):
    orbit = long_orbit(doubling, 100_000, seed=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est = estimate_metric_entropy(doubling, orbit, 0.1, [1, 2, 3, 4, 5, 6], base_points=200)
    assert est.extrapolated == pytest.approx(LOG2, abs=0.1)


def test_brin_katok_short_orbit(doubling):
    with pytest.raises(InsufficientOrbit):
        estimate_metric_entropy(doubling, long_orbit(doubling, 500, 0), 0.1, [1, 2], base_points=200)


# targets and graphs ------------------------------------------------------------


def test_admissible_targets(henon):
    for m in (0, 1, 2):
        for D in sample_admissible_targets(henon, m, 0.1, 4, seed=1):
            assert D.l == m
            if m > 0:
                assert in_X_m_delta(D, 0.1)


def test_cube_select():
    pts = np.array([0.01, 0.02, 0.03, 0.51, 0.9])
    patch, occ = cube_select_target(pts, 0.1)
    assert occ == 3
    with pytest.raises(EmptyInput):
        cube_select_target(np.zeros(0), 0.1)


def test_doubling_point_preimages(doubling):
    graphs = enumerate_preimage_graphs(doubling, point_patch(doubling, [1.0 + 0j]), 0, 3, 0.1)
    roots = np.sort_complex(np.array([g.centers[0, 0] for g in graphs]))
    assert np.allclose(roots, np.sort_complex(np.exp(2j * np.pi * np.arange(8) / 8)))


def test_doubling_arc_pullbacks(doubling):
    # graphs of radius e^-2 grow by 4 in two steps and must fit in the 0.9 ball
    D = ball_patch(doubling, [1.0 + 0j], 0.9)
    graphs = enumerate_preimage_graphs(doubling, D, 1, 2, 1.0, centers_per_axis=1)
    assert len(graphs) == 4
    for g in graphs:
        img = doubling.map(doubling.map(g.orbit[0]))
        assert np.max(np.abs(img - 1.0)) <= 0.9 + 1e-9


def test_henon_pullbacks_are_contained(henon):
    D = sample_admissible_targets(henon, 1, 0.1, 1, seed=0)[0]
    graphs = enumerate_preimage_graphs(henon, D, 1, 2, 0.1, budget=50)
    assert graphs
    for g in graphs:
        assert g.patch.lip_bound <= 1
        assert g.patch.admissibility["containment"] <= 1e-6
    if len(graphs) > 1:
        assert graph_distance(henon, graphs[0], graphs[1]) >= 0


def test_h10_equals_log_degree(doubling):
    est = estimate_dimensional_entropy(doubling, 1, 0, [0.2, 0.1], [2, 4, 6], target_count=2)
    assert est.extrapolated == pytest.approx(LOG2, abs=0.1)


def test_dim00_matches_pointwise(doubling):
    a = estimate_dimensional_entropy(doubling, 0, 0, [0.2, 0.1], [2, 4, 6], target_count=2, seed=3)
    b = estimate_pointwise_preimage_entropy(doubling, [0.2, 0.1], [2, 4, 6], target_samples=2, seed=3)
    assert [r[2] for r in a.rows] == [r[2] for r in b.rows]


def test_seeded_runs_are_identical(henon):
    kw = dict(target_count=2, budget=60, seed=5)
    a = estimate_dimensional_entropy(henon, 1, 1, [0.2], [1, 2], **kw)
    b = estimate_dimensional_entropy(henon, 1, 1, [0.2], [1, 2], **kw)
    assert a.to_csv() == b.to_csv()

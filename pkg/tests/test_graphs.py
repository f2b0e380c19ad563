import math

import numpy as np
import pytest

from dimentropy.exceptions import (
    DomainCollapse,
    FullDimensional,
    HypothesisViolated,
    RadiusTooLarge,
    ResolutionTooLow,
    SingularLinearPart,
    ZeroDimensional,
)
from dimentropy.graphs import (
    check_local_injectivity,
    cutoff,
    dump_patch,
    extend_graph,
    flat_patch,
    graph_transform,
    graph_volume,
    in_X_l_delta_n,
    in_X_m_delta,
    lipschitz_quotient,
    linear_setup,
    load_patch,
    make_patch,
    make_setup,
    pullback_graph,
    pushforward_volume,
    slice_graph,
    transform_domain_bound,
)

from helpers import random_setup


def _tilted(a, radius=1.0, resolution=9):
    return make_patch(lambda X: a * X, 1, radius, k=2, mode="complex", resolution=resolution, lip_bound=abs(a))


# patches ---------------------------------------------------------------------


def test_patch_shapes():
    W = make_patch(lambda X: X[:, :1] ** 2, 2, 0.5, k=3, mode="complex", resolution=5)
    assert (W.l, W.c, W.k) == (2, 1, 3)
    assert W.nodes().shape == (5**4, 2)
    assert W.points().shape[1] == 3


def test_full_dimensional_patch_is_ball():
    W = flat_patch(2, 0.3, k=2, mode="complex", resolution=5)
    assert W.c == 0
    assert W.node_values().shape == (W.nodes().shape[0], 0)
    assert np.allclose(W.points(inside_only=False), W.nodes())


def test_sampled_lipschitz_of_linear_graph():
    assert _tilted(0.4).sampled_lipschitz() == pytest.approx(0.4, rel=1e-9)
    assert lipschitz_quotient(np.array([[0.0], [1.0]]), np.array([[0.0], [3.0]])) == pytest.approx(3.0)


def test_admissibility_predicates():
    D = flat_patch(1, 0.1, k=2, mode="complex")
    assert in_X_m_delta(D, 0.1)
    assert not in_X_m_delta(D, 0.2)
    G = flat_patch(1, math.exp(-0.1 * 5), k=2, mode="complex")
    assert in_X_l_delta_n(G, 0.1, 5)


def test_cutoff():
    W = _tilted(0.5)
    C = cutoff(W, 0.5)
    assert C.radius == 0.5
    assert np.allclose(C.node_values(), 0.5 * C.nodes())
    with pytest.raises(RadiusTooLarge):
        cutoff(W, 2.0)


def test_slice_keeps_points():
    W = make_patch(lambda X: (X[:, :1] + 0.5 * X[:, 1:]) * 0.3, 2, 0.4, k=3, mode="complex", resolution=5)
    S = slice_graph(W)
    assert (S.l, S.c) == (1, 2)
    P = S.points()
    # every sliced point lies on W
    base, comp = W.project(P)
    assert np.allclose(W(base), comp, atol=1e-12)
    z = flat_patch(0, 0.1, k=1, mode="complex")
    with pytest.raises(ZeroDimensional):
        slice_graph(z)


def test_extend_contains_original():
    D = make_patch(lambda X: np.concatenate([0.2 * X, 0.1 * X], axis=1), 1, 0.3, k=3, mode="complex", resolution=5)
    E = extend_graph(D)
    assert (E.l, E.c) == (2, 1)
    P = D.points()
    base, comp = E.project(P)
    assert np.allclose(E(base), comp, atol=1e-12)
    with pytest.raises(FullDimensional):
        extend_graph(flat_patch(2, 0.1, k=2, mode="complex"))


def test_dump_load_roundtrip():
    W = _tilted(0.25 + 0.1j, resolution=5)
    W2 = load_patch(dump_patch(W))
    assert np.allclose(W2.node_values(), W.node_values())
    assert W2.radius == W.radius and W2.lip_bound == W.lip_bound


# volumes ---------------------------------------------------------------------


def test_flat_disk_area():
    assert graph_volume(flat_patch(1, 1.0, k=2, mode="complex", resolution=9)) == pytest.approx(math.pi, abs=1e-4)


def test_tilted_graph_area():
    assert graph_volume(_tilted(1.0)) == pytest.approx(2 * math.pi, abs=1e-3)


def test_real_segment_length():
    W = make_patch(lambda X: X, 1, 1.0, k=2, mode="real", resolution=9, lip_bound=1.0)
    assert graph_volume(W) == pytest.approx(2 * math.sqrt(2), abs=1e-6)


def test_low_resolution_volume_refused():
    W = make_patch(lambda X: X, 1, 1.0, k=2, mode="complex", resolution=5, keep_rule=False)
    with pytest.raises(ResolutionTooLow):
        graph_volume(W)


@pytest.mark.parametrize("seed", range(5))
def test_linear_pushforward_volume(seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    W = flat_patch(1, 0.7, k=2, mode="complex", resolution=9)
    exact = np.linalg.norm(C[:, 0]) ** 2 * math.pi * 0.7**2
    assert pushforward_volume(W, C) == pytest.approx(exact, abs=1e-4)


def test_pushforward_two_dimensional():
    rng = np.random.default_rng(3)
    C = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    W = flat_patch(2, 0.5, k=3, mode="complex", resolution=9)
    M = C[:, :2]
    exact = np.real(np.linalg.det(M.conj().T @ M)) * (math.pi * 0.25) ** 2
    assert pushforward_volume(W, C, quad_nodes=8) == pytest.approx(exact, rel=1e-8)


# graph transform -----------------------------------------------------------------


def test_linear_transform_exact():
    A, B = 3.0, 0.4
    S = linear_setup(np.diag([A, B]), 1, mode="complex")
    phi = make_patch(lambda X: 0.2 + 0.5j * X, 1, 1.0, k=2, mode="complex", resolution=9, lip_bound=0.5)
    out = graph_transform(S, phi)
    X = out.nodes()
    assert np.max(np.abs(out(X) - (B * (0.2 + 0.5j * X / A)))) <= 1e-10
    assert out.radius == pytest.approx(A * 1.0)


def test_block_linear_transform_exact():
    rng = np.random.default_rng(7)
    A = np.diag([2.5, 3.0]).astype(complex)
    B = np.array([[0.3j]])
    M = np.zeros((3, 3), dtype=complex)
    M[:2, :2], M[2:, 2:] = A, B
    G = np.array([[0.2, -0.1j]])
    S = linear_setup(M, 2, mode="complex")
    phi = make_patch(lambda X: X @ G.T, 2, 0.5, k=3, mode="complex", resolution=5, lip_bound=0.3)
    out = graph_transform(S, phi)
    X = out.nodes()
    expected = X @ (B @ G @ np.linalg.inv(A)).T
    assert np.max(np.abs(out(X) - expected)) <= 1e-10


def test_nonlinear_closed_form():
    def g(W):
        W = np.atleast_2d(W)
        return np.stack([2 * W[:, 0], 0.5 * W[:, 1] + 0.1 * W[:, 0] ** 2], axis=1)

    S = make_setup(g, 1, 2, mode="complex", R0=1.0, gamma0=0.3)
    phi = make_patch(lambda X: 0.3 * X, 1, 1.0, k=2, mode="complex", resolution=9, lip_bound=0.3)
    out = graph_transform(S, phi)
    X = out.nodes()
    expected = 0.075 * X + 0.025 * X**2
    assert np.max(np.abs(out(X) - expected)) <= 1e-8
    assert out.sampled_lipschitz() <= S.lipschitz_bound(0.3)


@pytest.mark.parametrize("seed", range(20))
def test_random_transform_bounds(seed):
    rng = np.random.default_rng(seed)
    S, phi, lip = random_setup(rng)
    out = graph_transform(S, phi)
    tr = out.admissibility["transform"]
    assert tr["lip_measured"] <= S.lipschitz_bound(lip) + 1e-12
    assert tr["contained_radius"] >= transform_domain_bound(S, phi.radius, S.beta) - 1e-12


def test_hypothesis_violated():
    S = linear_setup(np.diag([0.5, 2.0]), 1, mode="complex")
    phi = flat_patch(1, 1.0, k=2, mode="complex")
    with pytest.raises(HypothesisViolated):
        graph_transform(S, phi)


def test_domain_collapse():
    S = linear_setup(np.diag([2.0, 0.5]), 1, mode="complex")
    phi = make_patch(lambda X: X * 0 + 5.0, 1, 1.0, k=2, mode="complex", lip_bound=0.0)
    S = S.__class__(**{**S.__dict__, "gamma": 0.9})
    with pytest.raises((DomainCollapse, HypothesisViolated)):
        graph_transform(S, phi)


def test_pullback_of_horizontal_graph():
    # inverse of diag(2, 1/2) is diag(1/2, 2): pulling back a graph over Y contracts it
    S_inv = linear_setup(np.diag([0.5, 2.0]), 1, mode="complex", gamma0=0.5)
    psi = make_patch(lambda Y: 0.4 * Y, 1, 1.0, k=2, mode="complex", resolution=9, lip_bound=0.4)
    out = pullback_graph(S_inv, psi)
    Y = out.nodes()
    assert np.max(np.abs(out(Y) - 0.5 * 0.4 * Y / 2.0)) <= 1e-10
    assert out.admissibility["transform"]["within_budget"]


def test_injectivity_margin():
    jac = lambda z: np.stack([np.stack([2 + 0.2 * z[:, 0], 0 * z[:, 0]], -1),
                              np.stack([0 * z[:, 0], 0.5 + 0 * z[:, 0]], -1)], axis=1)
    m = check_local_injectivity(jac, 0.5, 2)
    assert m == pytest.approx(0.5 - 0.05, abs=1e-3)
    with pytest.raises(SingularLinearPart):
        check_local_injectivity(lambda z: np.zeros((z.shape[0], 2, 2), dtype=complex), 0.5, 2)

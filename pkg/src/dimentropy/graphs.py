"""Lipschitz graph patches and the operations the entropy proofs apply to them.

A :class:`GraphPatch` is the graph of ``Phi`` over a max-norm ball in an
``l``-dimensional base subspace.  In ambient coordinates its points are

    origin + base_frame @ X + complement_frame @ Phi(X)

Samples live on a regular lattice over the bounding box of the ball, one
lattice axis per real axis of the base (two per complex coordinate).  Values
between nodes are multilinear interpolants, unless the patch carries an
exact ``rule`` (used for closed-form graphs and in the property tests).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .cocycle import op_norm
from .exceptions import (
    DomainCollapse,
    FullDimensional,
    HypothesisViolated,
    NewtonDivergence,
    ParseError,
    RadiusTooLarge,
    ResolutionTooLow,
    SingularLinearPart,
    ZeroDimensional,
)

DEFAULT_RESOLUTION = 17
SOLVE_TOL = 1e-10
SOLVE_BUDGET = 50


def _to_real(z: np.ndarray, complex_mode: bool) -> np.ndarray:
    z = np.asarray(z)
    if not complex_mode:
        return z.real.astype(float) if np.iscomplexobj(z) else z.astype(float)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def _from_real(r: np.ndarray, complex_mode: bool) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if not complex_mode:
        return r
    return r[..., 0::2] + 1j * r[..., 1::2]


def max_norm(v: np.ndarray) -> np.ndarray:
    return np.max(np.abs(v), axis=-1) if v.shape[-1] else np.zeros(v.shape[:-1])


@dataclass(frozen=True, eq=False)
class GraphPatch:
    """Graph of ``Phi`` over the ball ``B_l(center, radius)`` (see module docstring)."""

    base_frame: np.ndarray
    complement_frame: np.ndarray
    origin: np.ndarray
    center: np.ndarray
    radius: float
    values: np.ndarray
    mode: str = "complex"
    lip_bound: float = 0.0
    rule: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    valid: Optional[np.ndarray] = field(default=None, repr=False)
    admissibility: dict = field(default_factory=dict)

    # -- shape -------------------------------------------------------------
    @property
    def complex_mode(self) -> bool:
        return self.mode == "complex"

    @property
    def dtype(self):
        return complex if self.complex_mode else float

    @property
    def l(self) -> int:
        return self.base_frame.shape[1]

    @property
    def c(self) -> int:
        return self.complement_frame.shape[1]

    @property
    def k(self) -> int:
        return self.base_frame.shape[0]

    @property
    def resolution(self) -> int:
        return self.values.shape[0] if self.l else 1

    @property
    def axes(self) -> tuple:
        """Real lattice coordinates along each real base axis."""
        g = self.resolution
        rc = _to_real(self.center[None, :], self.complex_mode)[0]
        return tuple(np.linspace(c - self.radius, c + self.radius, g) for c in rc)

    def nodes(self) -> np.ndarray:
        """Base coordinates of every lattice node, shape ``(N, l)``."""
        if self.l == 0:
            return np.zeros((1, 0), dtype=self.dtype)
        grids = np.meshgrid(*self.axes, indexing="ij")
        r = np.stack([g.ravel() for g in grids], axis=1)
        return _from_real(r, self.complex_mode)

    def node_values(self) -> np.ndarray:
        if self.c == 0:
            return np.zeros((self.nodes().shape[0], 0), dtype=self.dtype)
        return self.values.reshape(-1, self.c)

    def in_ball(self, X=None, tol: float = 1e-12) -> np.ndarray:
        X = self.nodes() if X is None else X
        return max_norm(X - self.center) <= self.radius + tol

    def valid_nodes(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.node_values().shape[0], dtype=bool)
        return self.valid.ravel()

    @property
    def center_value(self) -> np.ndarray:
        return self(self.center[None, :])[0]

    # -- evaluation --------------------------------------------------------
    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=self.dtype))
        if self.rule is not None:
            return np.asarray(self.rule(X), dtype=self.dtype).reshape(X.shape[0], self.c)
        if self.l == 0:
            return np.broadcast_to(self.values.reshape(1, self.c), (X.shape[0], self.c)).copy()
        interp = RegularGridInterpolator(self.axes, self.values, bounds_error=False, fill_value=None)
        return interp(_to_real(X, self.complex_mode)).reshape(X.shape[0], self.c)

    def embed(self, X) -> np.ndarray:
        """Ambient points over base coordinates ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=self.dtype))
        return self.origin + X @ self.base_frame.T + self(X) @ self.complement_frame.T

    def points(self, inside_only: bool = True) -> np.ndarray:
        """Ambient points at the lattice nodes (inside the ball by default)."""
        X = self.nodes()
        keep = self.valid_nodes()
        if inside_only:
            keep = keep & self.in_ball(X)
        X = X[keep]
        return self.origin + X @ self.base_frame.T + self.node_values()[keep] @ self.complement_frame.T

    def project(self, P) -> tuple:
        """Base and complement coordinates of ambient points (frames are orthonormal)."""
        P = np.atleast_2d(P) - self.origin
        frames = np.concatenate([self.base_frame, self.complement_frame], axis=1)
        coords = np.linalg.solve(frames, P.T).T
        return coords[:, : self.l], coords[:, self.l :]

    def deviation(self, P) -> np.ndarray:
        """Distance in the complement direction from ``P`` to the graph.

        Points whose base projection leaves the ball get ``inf``.
        """
        X, Y = self.project(P)
        d = max_norm(Y - self(X))
        return np.where(self.in_ball(X, tol=1e-9), d, np.inf)

    # -- metrics -----------------------------------------------------------
    def sampled_lipschitz(self, max_nodes: int = 800, seed: int = 0) -> float:
        """Brute-force max of ``|Phi(X1) - Phi(X2)| / |X1 - X2|`` over node pairs."""
        if self.l == 0 or self.c == 0:
            return 0.0
        X = self.nodes()
        V = self.node_values()
        keep = self.in_ball(X) & self.valid_nodes()
        X, V = X[keep], V[keep]
        if X.shape[0] > max_nodes:
            idx = np.random.default_rng(seed).choice(X.shape[0], max_nodes, replace=False)
            X, V = X[np.sort(idx)], V[np.sort(idx)]
        return lipschitz_quotient(X, V)

    def with_(self, **kw) -> "GraphPatch":
        return replace(self, **kw)


def lipschitz_quotient(X: np.ndarray, V: np.ndarray) -> float:
    best = 0.0
    for i in range(X.shape[0] - 1):
        dx = max_norm(X[i + 1 :] - X[i])
        dv = max_norm(V[i + 1 :] - V[i])
        ok = dx > 0
        if np.any(ok):
            best = max(best, float(np.max(dv[ok] / dx[ok])))
    return best


def _lattice(center, radius, l, g, complex_mode):
    rc = _to_real(np.asarray(center)[None, :], complex_mode)[0]
    if g == 1:
        axes = [np.array([c]) for c in rc]
    else:
        axes = [np.linspace(c - radius, c + radius, g) for c in rc]
    grids = np.meshgrid(*axes, indexing="ij")
    r = np.stack([gr.ravel() for gr in grids], axis=1) if axes else np.zeros((1, 0))
    return _from_real(r, complex_mode), (g,) * len(axes)


def make_patch(
    rule: Callable,
    l: int,
    radius: float,
    *,
    k: Optional[int] = None,
    base_frame=None,
    complement_frame=None,
    origin=None,
    center=None,
    mode: str = "complex",
    resolution: int = DEFAULT_RESOLUTION,
    lip_bound: Optional[float] = None,
    keep_rule: bool = True,
    admissibility: Optional[dict] = None,
) -> GraphPatch:
    """Sample ``rule`` on a lattice; frames default to the coordinate axes."""
    dtype = complex if mode == "complex" else float
    if base_frame is None:
        k = l if k is None else k
        frames = np.eye(k, dtype=dtype)
        base_frame, complement_frame = frames[:, :l], frames[:, l:]
    base_frame = np.asarray(base_frame, dtype=dtype)
    complement_frame = np.asarray(complement_frame, dtype=dtype)
    k = base_frame.shape[0]
    c = complement_frame.shape[1]
    origin = np.zeros(k, dtype=dtype) if origin is None else np.asarray(origin, dtype=dtype)
    center = np.zeros(l, dtype=dtype) if center is None else np.asarray(center, dtype=dtype)
    X, shape = _lattice(center, radius, l, resolution, mode == "complex")
    vals = np.asarray(rule(X), dtype=dtype).reshape(X.shape[0], c)
    patch = GraphPatch(
        base_frame=base_frame,
        complement_frame=complement_frame,
        origin=origin,
        center=center,
        radius=float(radius),
        values=vals.reshape(shape + (c,)),
        mode=mode,
        lip_bound=0.0,
        rule=rule if keep_rule else None,
        admissibility=dict(admissibility or {}),
    )
    if lip_bound is None:
        lip_bound = patch.sampled_lipschitz()
    return patch.with_(lip_bound=float(lip_bound))


def flat_patch(l, radius, **kw) -> GraphPatch:
    k = kw.get("k")
    if k is None and kw.get("complement_frame") is not None:
        k = np.asarray(kw["complement_frame"]).shape[0]
    c = (k if k is not None else l) - l
    kw.setdefault("lip_bound", 0.0)
    return make_patch(lambda X: np.zeros((X.shape[0], c)), l, radius, **kw)


def in_X_m_delta(patch: GraphPatch, delta: float, tol: float = 1e-9) -> bool:
    """Membership test for the admissible targets: ``Phi(center) = 0``, Lip <= 1, radius delta."""
    return (
        patch.lip_bound <= 1 + tol
        and abs(patch.radius - delta) <= tol * max(1.0, delta)
        and float(max_norm(patch.center_value[None, :])[0]) <= tol
    )


def in_X_l_delta_n(patch: GraphPatch, delta: float, n: int, tol: float = 1e-9) -> bool:
    """Membership test for preimage graphs: radius ``e^{-delta n}``, Lip <= 1, iterates off the singular set."""
    dists = patch.admissibility.get("singular_distances", [])
    return (
        patch.lip_bound <= 1 + tol
        and abs(patch.radius - math.exp(-delta * n)) <= tol
        and all(d > 0 for d in dists)
    )


# ---------------------------------------------------------------------------
# cut-off, slicing, extension
# ---------------------------------------------------------------------------


def cutoff(graph: GraphPatch, radius: float) -> GraphPatch:
    """Restrict to the concentric ball of ``radius`` (re-sampled at the same resolution)."""
    if radius > graph.radius * (1 + 1e-12):
        raise RadiusTooLarge(f"cut-off radius {radius:g} exceeds graph radius {graph.radius:g}")
    if radius >= graph.radius:
        return graph
    X, shape = _lattice(graph.center, radius, graph.l, graph.resolution, graph.complex_mode)
    vals = graph(X)
    valid = None
    if graph.valid is not None:
        # a node stays valid when its enclosing cell was valid in the parent
        valid = _cell_valid(graph, X).reshape(shape)
    return graph.with_(radius=float(radius), values=vals.reshape(shape + (graph.c,)), valid=valid)


def _cell_valid(graph: GraphPatch, X: np.ndarray) -> np.ndarray:
    interp = RegularGridInterpolator(
        graph.axes, (~graph.valid).astype(float), bounds_error=False, fill_value=1.0
    )
    return interp(_to_real(X, graph.complex_mode)) == 0


def slice_graph(W: GraphPatch) -> GraphPatch:
    """Fix the last base coordinate at its center value.

    The fixed coordinate moves into the complement, so the sliced patch is
    the subset ``{X_l = center_l}`` of ``W`` with the same ambient points.
    """
    if W.l == 0:
        raise ZeroDimensional("cannot slice a 0-dimensional graph")
    l = W.l
    yl = W.center[l - 1]
    base = W.base_frame[:, : l - 1]
    comp = np.concatenate([W.base_frame[:, l - 1 :], W.complement_frame], axis=1)
    per = 2 if W.complex_mode else 1
    mid = (W.resolution - 1) // 2
    if W.resolution % 2:
        index = (slice(None),) * (per * (l - 1)) + (mid,) * per
        vals = W.values[index]
        valid = None if W.valid is None else W.valid[index]
    else:
        X, _ = _lattice(W.center[: l - 1], W.radius, l - 1, W.resolution, W.complex_mode)
        full = np.concatenate([X, np.full((X.shape[0], 1), yl)], axis=1)
        vals = W(full).reshape((W.resolution,) * (per * (l - 1)) + (W.c,))
        valid = None
    fixed = np.full(vals.shape[:-1] + (1,), yl, dtype=W.dtype)
    vals = np.concatenate([fixed, vals], axis=-1)
    rule = None
    if W.rule is not None:
        parent = W.rule

        def rule(X, parent=parent, yl=yl):
            full = np.concatenate([X, np.full((X.shape[0], 1), yl, dtype=X.dtype)], axis=1)
            return np.concatenate([np.full((X.shape[0], 1), yl, dtype=X.dtype), parent(full)], axis=1)

    return GraphPatch(
        base_frame=base,
        complement_frame=comp,
        origin=W.origin,
        center=W.center[: l - 1],
        radius=W.radius,
        values=vals if l > 1 else vals.reshape(W.c + 1),
        mode=W.mode,
        lip_bound=W.lip_bound,
        rule=rule,
        valid=valid,
        admissibility=dict(W.admissibility),
    )


def extend_graph(D: GraphPatch) -> GraphPatch:
    """Adjoin the first complement coordinate to the base, dropping ``Phi_1``.

    The result is a graph over ``B_{m+1}((center, 0), radius)`` that contains
    ``D``: the point over ``X`` in ``D`` is the point over
    ``(X, Phi_1(X))`` in the extension.
    """
    if D.c == 0:
        raise FullDimensional("graph is already full-dimensional")
    m = D.l
    base = np.concatenate([D.base_frame, D.complement_frame[:, :1]], axis=1)
    comp = D.complement_frame[:, 1:]
    center = np.concatenate([D.center, np.zeros(1, dtype=D.dtype)])
    per = 2 if D.complex_mode else 1
    g = D.resolution if m else DEFAULT_RESOLUTION
    vals = D.values.reshape((g,) * (per * m) + (D.c,))[..., 1:]
    vals = np.broadcast_to(
        vals.reshape(vals.shape[:-1] + (1,) * per + (D.c - 1,)),
        (g,) * (per * (m + 1)) + (D.c - 1,),
    ).copy()
    valid = None
    if D.valid is not None:
        valid = np.broadcast_to(D.valid.reshape(D.valid.shape + (1,) * per), (g,) * (per * (m + 1))).copy()
    rule = None
    if D.rule is not None:
        parent = D.rule

        def rule(X, parent=parent, m=m):
            return parent(X[:, :m])[:, 1:]

    elif m == 0:
        rest = D.values.reshape(D.c)[1:]

        def rule(X, rest=rest):
            return np.broadcast_to(rest, (X.shape[0], rest.shape[0])).copy()

    # the origin absorbs the complement offset of Phi_1's reference value
    return GraphPatch(
        base_frame=base,
        complement_frame=comp,
        origin=D.origin,
        center=center,
        radius=D.radius,
        values=vals,
        mode=D.mode,
        lip_bound=D.lip_bound,
        rule=rule,
        valid=valid,
        admissibility=dict(D.admissibility),
    )


# ---------------------------------------------------------------------------
# volumes
# ---------------------------------------------------------------------------


def _quadrature(l, radius, center, complex_mode, nodes=24):
    """Product quadrature over a polydisk (complex) or cube (real)."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    if complex_mode:
        r = 0.5 * (x + 1) * radius
        wr = 0.5 * w * radius * r
        nt = 2 * nodes
        th = 2 * np.pi * np.arange(nt) / nt
        pts1 = (r[:, None] * np.exp(1j * th)[None, :]).ravel()
        w1 = np.repeat(wr, nt) * (2 * np.pi / nt)
    else:
        pts1 = x * radius
        w1 = w * radius
    grids = np.meshgrid(*([np.arange(pts1.size)] * l), indexing="ij")
    idx = [g.ravel() for g in grids]
    P = np.stack([pts1[i] for i in idx], axis=1) if l else np.zeros((1, 0))
    W = np.prod(np.stack([w1[i] for i in idx], axis=1), axis=1) if l else np.ones(1)
    return P + center, W


def _embedding_jacobian(W: GraphPatch, X: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Real Jacobian of ``X -> embed(X)`` on realified coordinates, ``(N, 2k, 2l)``."""
    cm = W.complex_mode
    Xr = _to_real(X, cm)
    cols = []
    for j in range(Xr.shape[1]):
        e = np.zeros(Xr.shape[1])
        e[j] = h
        plus = _to_real(W.embed(_from_real(Xr + e, cm)), cm)
        minus = _to_real(W.embed(_from_real(Xr - e, cm)), cm)
        cols.append((plus - minus) / (2 * h))
    return np.stack(cols, axis=-1)


def graph_volume(W: GraphPatch, quad_nodes: int = 24) -> float:
    """Euclidean volume of the graph over its ball (real dimension ``2l`` or ``l``).

    For holomorphic graphs the Gram factor equals ``det(I + DPhi^* DPhi)``,
    the squared modulus convention of the coarea computations.
    """
    if W.l and W.resolution < 8 and W.rule is None:
        raise ResolutionTooLow(f"grid resolution {W.resolution} is below 8 per axis")
    if W.l == 0:
        return 1.0
    X, w = _quadrature(W.l, W.radius, W.center, W.complex_mode, quad_nodes)
    J = _embedding_jacobian(W, X)
    G = np.einsum("nki,nkj->nij", J, J)
    return float(np.sum(w * np.sqrt(np.maximum(np.linalg.det(G), 0.0))))


def pushforward_volume(W: GraphPatch, C: np.ndarray, quad_nodes: int = 24) -> float:
    """``int |Lambda^l D(C o embed)|^2`` over the base ball of ``W`` (linear ``C``)."""
    X, w = _quadrature(W.l, W.radius, W.center, W.complex_mode, quad_nodes)
    h = 1e-6
    cols = []
    for j in range(W.l):
        e = np.zeros(W.l, dtype=W.dtype)
        e[j] = h
        cols.append((W.embed(X + e) - W.embed(X - e)) / (2 * h))
    J = np.stack(cols, axis=-1)
    CJ = np.einsum("ab,nbl->nal", np.asarray(C, dtype=W.dtype), J)
    G = np.einsum("nal,nam->nlm", CJ.conj(), CJ)
    det = np.real(np.linalg.det(G))
    factor = det if W.complex_mode else np.sqrt(np.maximum(det, 0.0))
    return float(np.sum(w * factor))


# ---------------------------------------------------------------------------
# graph transform
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GraphTransformSetup:
    """``g(X, Y) = (A X + R, B Y + U)`` on the ``R0`` ball, ``|DR|, |DU| <= gamma``."""

    k1: int
    k2: int
    A: np.ndarray
    B: np.ndarray
    g: Callable[[np.ndarray], np.ndarray]
    gamma: float
    gamma0: float = 1.0
    R0: float = 1.0
    R1: float = 1.0
    alpha: float = 1.0
    beta: float = 0.0
    mode: str = "complex"
    d2_bound: float = 0.0

    @property
    def dtype(self):
        return complex if self.mode == "complex" else float

    @property
    def norm_B(self) -> float:
        return float(op_norm(self.B)) if self.k2 else 0.0

    @property
    def norm_Ainv(self) -> float:
        return float(op_norm(np.linalg.inv(self.A)))

    @property
    def xi(self) -> float:
        return 1.0 - self.norm_B * self.norm_Ainv

    @property
    def hyperbolic(self) -> bool:
        return self.norm_B < 1.0 / self.norm_Ainv

    @property
    def hypothesis(self) -> bool:
        return self.hyperbolic and self.gamma * self.norm_Ainv * (1 + self.gamma0) < 1

    def lipschitz_bound(self, gamma0: Optional[float] = None) -> float:
        g0 = self.gamma0 if gamma0 is None else gamma0
        num = self.norm_B * g0 + self.gamma * (1 + g0)
        den = 1.0 / self.norm_Ainv - self.gamma * (1 + g0)
        return num / den

    def center_offset_bound(self, beta: float, gamma0: Optional[float] = None) -> float:
        g0 = self.gamma0 if gamma0 is None else gamma0
        return (1 + g0) * (self.norm_B * beta + self.gamma * beta + self.d2_bound * beta**2)

    def swapped(self) -> "GraphTransformSetup":
        """The same map with the two blocks exchanged (``Y`` becomes the base)."""
        k1, k2 = self.k1, self.k2
        g = self.g

        def gs(W):
            W = np.atleast_2d(W)
            out = g(np.concatenate([W[:, k2:], W[:, :k2]], axis=1))
            return np.concatenate([out[:, k1:], out[:, :k1]], axis=1)

        return replace(self, k1=k2, k2=k1, A=self.B, B=self.A, g=gs)


def estimate_gamma(g, A, B, radius, mode="complex", samples=400, seed=0, safety=1.25, h=1e-6):
    """``safety`` times the sampled sup of ``|Dg(w) - diag(A, B)|`` on the ``radius`` ball."""
    k1, k2 = A.shape[0], B.shape[0]
    k = k1 + k2
    L = np.zeros((k, k), dtype=complex if mode == "complex" else float)
    L[:k1, :k1] = A
    L[k1:, k1:] = B
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1, 1, (samples, k))
    if mode == "complex":
        w = w + 1j * rng.uniform(-1, 1, (samples, k))
        w = w / np.maximum(1.0, np.abs(w))
    w = np.concatenate([np.zeros((1, k)), radius * w])
    D = fd_jacobian(g, w, h)
    return safety * float(np.max(op_norm(D - L)))


def fd_jacobian(g, w, h=1e-6):
    """Central-difference Jacobian along the coordinate axes (holomorphic in complex mode)."""
    w = np.atleast_2d(w)
    cols = []
    for j in range(w.shape[1]):
        e = np.zeros(w.shape[1])
        e[j] = h
        cols.append((g(w + e) - g(w - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def make_setup(g, k1, k, *, mode="complex", R0=1.0, R1=None, gamma0=1.0, alpha=1.0, beta=0.0, gamma=None, seed=0, d2_bound=0.0):
    """Read ``A``, ``B`` off ``Dg(0)`` and estimate ``gamma`` by sampling when not given."""
    dtype = complex if mode == "complex" else float
    kk = k
    D0 = fd_jacobian(g, np.zeros((1, kk), dtype=dtype))[0]
    A = D0[:k1, :k1]
    B = D0[k1:, k1:]
    if gamma is None:
        gamma = estimate_gamma(g, A, B, R0, mode, seed=seed)
    return GraphTransformSetup(
        k1=k1, k2=kk - k1, A=A, B=B, g=g, gamma=float(gamma), gamma0=gamma0,
        R0=R0, R1=R0 if R1 is None else R1, alpha=alpha, beta=beta, mode=mode, d2_bound=d2_bound,
    )


def transform_domain_bound(setup: GraphTransformSetup, alpha: float, beta: float) -> float:
    """Radius of the ball the projected image is guaranteed to contain."""
    if not setup.hypothesis:
        raise HypothesisViolated(
            f"gamma |A^-1| (1 + gamma0) = {setup.gamma * setup.norm_Ainv * (1 + setup.gamma0):.4g} is not < 1"
            if setup.hyperbolic
            else "|B| >= |A^-1|^-1: the splitting is not dominated"
        )
    return (1.0 / setup.norm_Ainv - setup.gamma * (1 + setup.gamma0)) * alpha - setup.gamma * beta


def _solve_base(setup: GraphTransformSetup, phi: GraphPatch, Xp: np.ndarray):
    """Solve ``pi_0 g(X, phi(X)) = X'`` row-wise; returns ``(X, residual)``."""
    Ainv = np.linalg.inv(setup.A)
    k1 = setup.k1

    def F(X):
        return setup.g(np.concatenate([X, phi(X)], axis=1))[:, :k1]

    X = Xp @ Ainv.T
    res = np.full(Xp.shape[0], np.inf)
    for _ in range(SOLVE_BUDGET):
        with np.errstate(all="ignore"):
            r = F(X) - Xp
        res = max_norm(r)
        if np.all(res <= SOLVE_TOL):
            return X, res
        X = X - r @ Ainv.T
    # Newton on the realified system for the stragglers
    cm = setup.mode == "complex"
    bad = res > SOLVE_TOL
    Xb = X[bad]
    for _ in range(SOLVE_BUDGET):
        Fr = lambda Z: _to_real(F(_from_real(Z, cm)), cm)
        Zr = _to_real(Xb, cm)
        r = Fr(Zr) - _to_real(Xp[bad], cm)
        if np.all(max_norm(r) <= SOLVE_TOL):
            break
        J = fd_jacobian(Fr, Zr)
        try:
            step = np.linalg.solve(J, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        Xb = _from_real(Zr - step, cm)
    X[bad] = Xb
    with np.errstate(all="ignore"):
        res = max_norm(F(X) - Xp)
    return X, res


def _contained_radius(patch: GraphPatch) -> float:
    """Largest radius around the center on which every lattice node is valid."""
    X = patch.nodes()
    dist = max_norm(X - patch.center)
    bad = ~patch.valid_nodes()
    if not np.any(bad):
        return patch.radius
    # resolved at lattice spacing: every node strictly closer is valid
    return min(patch.radius, float(np.min(dist[bad])))


def graph_transform(
    setup: GraphTransformSetup,
    phi: GraphPatch,
    out_radius: Optional[float] = None,
    resolution: Optional[int] = None,
    exact: bool = True,
    check: bool = True,
) -> GraphPatch:
    """Image of the graph of ``phi`` under ``setup.g`` as a graph over the first block.

    The output lattice covers ``B(0, out_radius)`` (default: the guaranteed
    domain radius for ``phi``).  A node is valid when its base preimage lies
    in the domain ball of ``phi``.  With ``exact`` the output carries a rule
    that re-solves the base equation at any query point.
    """
    alpha = phi.radius
    beta = float(max_norm(phi(np.zeros((1, setup.k1), dtype=setup.dtype)))[0])
    bound = transform_domain_bound(replace(setup, gamma0=max(setup.gamma0, 0.0)), alpha, beta)
    if out_radius is None:
        out_radius = bound
    if out_radius <= 0:
        raise DomainCollapse(f"guaranteed image radius {bound:.3g} is not positive")
    g_res = resolution or phi.resolution
    Xp, shape = _lattice(np.zeros(setup.k1, dtype=setup.dtype), out_radius, setup.k1, g_res, setup.mode == "complex")
    X, res = _solve_base(setup, phi, Xp)
    if not np.all(np.isfinite(res)) or np.any(res > 1e-8):
        raise NewtonDivergence(f"base solve residual {np.nanmax(res):.3g} after {SOLVE_BUDGET} iterations")
    inside = max_norm(X - phi.center) <= phi.radius + 1e-9
    vals = setup.g(np.concatenate([X, phi(X)], axis=1))[:, setup.k1 :]
    rule = None
    if exact:

        def rule(Q, setup=setup, phi=phi):
            Xq, rq = _solve_base(setup, phi, Q)
            if np.any(rq > 1e-8):
                raise NewtonDivergence("base solve failed at a query point")
            return setup.g(np.concatenate([Xq, phi(Xq)], axis=1))[:, setup.k1 :]

    lip = setup.lipschitz_bound(phi.lip_bound if phi.lip_bound <= setup.gamma0 else setup.gamma0)
    out = GraphPatch(
        base_frame=np.eye(setup.k1 + setup.k2, dtype=setup.dtype)[:, : setup.k1],
        complement_frame=np.eye(setup.k1 + setup.k2, dtype=setup.dtype)[:, setup.k1 :],
        origin=np.zeros(setup.k1 + setup.k2, dtype=setup.dtype),
        center=np.zeros(setup.k1, dtype=setup.dtype),
        radius=float(out_radius),
        values=vals.reshape(shape + (setup.k2,)),
        mode=setup.mode,
        lip_bound=float(lip),
        rule=rule,
        valid=inside.reshape(shape),
        admissibility=dict(phi.admissibility),
    )
    cr = _contained_radius(out)
    if not inside.reshape(-1)[np.argmin(max_norm(Xp))]:
        raise DomainCollapse("the image of the graph does not contain the output center")
    diag = {
        "domain_bound": bound,
        "contained_radius": cr,
        "center_offset_bound": setup.center_offset_bound(beta),
        "solve_residual": float(np.max(res)),
    }
    if check:
        diag["lip_measured"] = out.sampled_lipschitz()
    out.admissibility.update({"transform": diag})
    return out


def pullback_graph(setup_inv: GraphTransformSetup, psi: GraphPatch, out_radius=None, budget: Optional[float] = None, **kw) -> GraphPatch:
    """Image of a graph ``(psi(Y), Y)`` over the second block under the local inverse.

    ``setup_inv`` describes the local inverse in the original block order
    (contracting first block, expanding second); the transform runs on the
    swapped blocks.  The output Lipschitz budget defaults to ``2 gamma0``.
    """
    sw = setup_inv.swapped()
    out = graph_transform(sw, psi, out_radius=out_radius, **kw)
    budget = 2 * setup_inv.gamma0 if budget is None else budget
    diag = out.admissibility.get("transform", {})
    diag["lip_budget"] = budget
    diag["within_budget"] = out.lip_bound <= budget + 1e-12
    return out


def linear_setup(M, k1, mode="complex", **kw) -> GraphTransformSetup:
    """Setup for the linear map ``M``; off-diagonal blocks count towards ``gamma``."""
    M = np.asarray(M, dtype=complex if mode == "complex" else float)
    k = M.shape[0]
    off = M.copy()
    off[:k1, :k1] = 0
    off[k1:, k1:] = 0
    gamma = float(op_norm(off)) if k > k1 else 0.0
    return GraphTransformSetup(
        k1=k1, k2=k - k1, A=M[:k1, :k1], B=M[k1:, k1:], g=lambda W: np.atleast_2d(W) @ M.T,
        gamma=gamma, mode=mode, **kw,
    )


# ---------------------------------------------------------------------------
# injectivity
# ---------------------------------------------------------------------------


def check_local_injectivity(jacobian: Callable, radius: float, k: int, mode: str = "complex", samples: int = 512, seed: int = 0) -> float:
    """``1/2 - sup |Id - Dg(0)^{-1} Dg(z)|`` over samples of the ``radius`` ball.

    A positive margin makes ``Id - Dg(0)^{-1} g`` a contraction with
    constant below one half, hence ``g`` one-to-one on the ball.
    """
    dtype = complex if mode == "complex" else float
    D0 = jacobian(np.zeros((1, k), dtype=dtype))[0]
    if not np.all(np.isfinite(D0)) or abs(np.linalg.det(D0)) < 1e-14 or np.linalg.cond(D0) > 1e12:
        raise SingularLinearPart("Dg(0) is not invertible")
    D0inv = np.linalg.inv(D0)
    rng = np.random.default_rng(seed)
    if mode == "complex":
        z = rng.uniform(0, 1, (samples, k)) * np.exp(2j * np.pi * rng.random((samples, k)))
        edge = np.exp(2j * np.pi * rng.random((samples, k)))
    else:
        z = rng.uniform(-1, 1, (samples, k))
        edge = rng.choice([-1.0, 1.0], size=(samples, k))
    z = radius * np.concatenate([np.zeros((1, k)), z, edge])
    Dz = jacobian(z)
    E = np.eye(k) - np.einsum("ij,njk->nik", D0inv, Dz)
    return 0.5 - float(np.max(op_norm(E)))


# ---------------------------------------------------------------------------
# plain-text serialization
# ---------------------------------------------------------------------------


def dump_patch(patch: GraphPatch) -> str:
    """Tabular text form: a header, then one row per lattice node.

    Header lines start with ``#``: ``# dims l c k``, ``# radius r``,
    ``# lip L``, ``# mode m``, ``# resolution g`` and the frames/center/origin
    as complex pairs.  Rows hold the lattice multi-index, base coordinates and
    complement values (real and imaginary parts interleaved in complex mode).
    """
    cm = patch.complex_mode
    buf = io.StringIO()
    buf.write(f"# dims {patch.l} {patch.c} {patch.k}\n")
    buf.write(f"# radius {patch.radius:.17g}\n")
    buf.write(f"# lip {patch.lip_bound:.17g}\n")
    buf.write(f"# mode {patch.mode}\n")
    buf.write(f"# resolution {patch.resolution}\n")
    for name, arr in (("origin", patch.origin), ("center", patch.center),
                      ("base_frame", patch.base_frame), ("complement_frame", patch.complement_frame)):
        flat = _to_real(np.asarray(arr, dtype=patch.dtype).ravel()[None, :], cm)[0]
        buf.write(f"# {name} " + " ".join(f"{v:.17g}" for v in flat) + "\n")
    X = patch.nodes()
    V = patch.node_values()
    naxes = len(patch.axes)
    idx = np.indices((patch.resolution,) * naxes).reshape(naxes, -1).T if naxes else np.zeros((1, 0), int)
    Xr = _to_real(X, cm)
    Vr = _to_real(V, cm)
    for i in range(X.shape[0]):
        row = [str(v) for v in idx[i]] + [f"{v:.17g}" for v in Xr[i]] + [f"{v:.17g}" for v in Vr[i]]
        buf.write(" ".join(row) + "\n")
    return buf.getvalue()


def load_patch(text: str) -> GraphPatch:
    header = {}
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if not parts:
                continue
            header[parts[0]] = parts[1:]
            continue
        try:
            rows.append([float(v) for v in line.split()])
        except ValueError:
            raise ParseError(f"non-numeric patch row: {line!r}", line=lineno) from None
    try:
        l, c, k = (int(v) for v in header["dims"])
        radius = float(header["radius"][0])
        lip = float(header["lip"][0])
        mode = header["mode"][0]
        g = int(header["resolution"][0])
    except (KeyError, IndexError, ValueError):
        raise ParseError("patch header incomplete") from None
    cm = mode == "complex"
    dtype = complex if cm else float

    def arr(name, shape):
        vals = np.array([float(v) for v in header.get(name, [])])
        return _from_real(vals[None, :], cm)[0].reshape(shape).astype(dtype)

    per = 2 if cm else 1
    naxes = per * l
    data = np.array(rows) if rows else np.zeros((0, naxes * 2 + per * c))
    Vr = data[:, naxes + naxes :]
    V = _from_real(Vr, cm)
    shape = (g,) * naxes + (c,) if l else (c,)
    return GraphPatch(
        base_frame=arr("base_frame", (k, l)),
        complement_frame=arr("complement_frame", (k, c)),
        origin=arr("origin", (k,)),
        center=arr("center", (l,)),
        radius=radius,
        values=V.reshape(shape),
        mode=mode,
        lip_bound=lip,
    )

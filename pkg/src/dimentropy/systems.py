"""Dynamical systems, charts, the chart metric and the built-in registry.

Every system works internally on *affine* coordinate arrays of shape
``(N, k)``: complex arrays in complex mode, real arrays in real mode.  The
chart layer (:class:`Chart`, :class:`ChartPoint`) sits on top and is what the
point-level operations (:func:`evaluate`, :func:`differential`, ...) accept.
Batch estimators stay in affine coordinates for speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import (
    EmptySet,
    NoBranchRule,
    OutOfDomain,
    RootFindingFailure,
    SingularPoint,
)
from .roots import polynomial_preimages

SINGULAR_TOL = 1e-8
BRANCH_TOL = 1e-9

Array = np.ndarray


@dataclass(frozen=True)
class Chart:
    """Axis-aligned box in chart coordinates plus the transition to affine ones.

    ``lower``/``upper`` bound every real axis (real and imaginary parts are
    separate axes in complex mode).
    """

    lower: Array
    upper: Array
    to_affine: Callable[[Array], Array] = staticmethod(lambda c: c)
    from_affine: Callable[[Array], Array] = staticmethod(lambda a: a)

    def contains(self, coords) -> bool:
        r = _real_axes(np.atleast_2d(coords))[0]
        if not np.all(np.isfinite(r)):
            return False
        return bool(np.all(r >= self.lower - 1e-12) and np.all(r <= self.upper + 1e-12))


@dataclass(frozen=True)
class ChartPoint:
    chart_id: int
    coords: Array

    def __post_init__(self):
        object.__setattr__(self, "coords", np.atleast_1d(np.asarray(self.coords)))

    @property
    def k(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True, eq=False)
class MapSystem:
    """A map together with its differential, inverse branches and singular set.

    All callables act on affine arrays of shape ``(N, k)``.  ``inverse``
    returns an array of shape ``(N, degree, k)``; branches that do not exist
    for a given input are NaN.
    """

    name: str
    k: int
    mode: str
    map: Callable[[Array], Array]
    jacobian: Callable[[Array], Array]
    singular_distance: Callable[[Array], Array]
    inverse: Optional[Callable[[Array], Array]] = None
    degree: int = 1
    charts: tuple = ()
    period: Optional[float] = None
    sampler: Optional[Callable[[np.random.Generator, int], Array]] = None
    lattice: Optional[Callable[[int], Array]] = None
    reference: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return complex if self.mode == "complex" else float

    @property
    def multiplicity(self) -> int:
        """Real dimension per coordinate; doubles exponent sums in complex mode."""
        return 2 if self.mode == "complex" else 1

    @property
    def invertible(self) -> bool:
        return self.inverse is not None and self.degree == 1

    def as_array(self, points) -> Array:
        z = np.asarray(points, dtype=self.dtype)
        if z.ndim == 1:
            z = z.reshape(1, self.k) if z.shape[0] == self.k else z[:, None]
        return z

    def wrap(self, z: Array) -> Array:
        if self.period is None:
            return z
        return np.mod(z, self.period)

    def delta(self, a: Array, b: Array) -> Array:
        """Coordinate-wise displacement ``a - b`` respecting periodicity."""
        d = a - b
        if self.period is not None:
            d = d - self.period * np.round(d / self.period)
        return d

    def dist(self, a: Array, b: Array) -> Array:
        """Max-norm of coordinate moduli, broadcast over leading axes."""
        return np.max(np.abs(self.delta(a, b)), axis=-1)

    def in_domain(self, z: Array) -> Array:
        """Rows of ``z`` that lie in at least one chart box (everything if no charts)."""
        z = self.as_array(z)
        if not self.charts or self.period is not None:
            return np.all(np.isfinite(z), axis=1)
        ok = np.zeros(z.shape[0], dtype=bool)
        for ch in self.charts:
            with np.errstate(all="ignore"):
                r = _real_axes(np.asarray(ch.from_affine(z)))
            inside = np.all(np.isfinite(r), axis=1)
            inside &= np.all((r >= ch.lower - 1e-12) & (r <= ch.upper + 1e-12), axis=1)
            ok |= inside
        return ok

    def sample(self, rng: np.random.Generator, count: int) -> Array:
        if self.sampler is None:
            raise ValueError(f"system {self.name!r} declares no sampling region")
        return self.sampler(rng, count)


def _real_axes(z: Array) -> Array:
    z = np.asarray(z)
    if np.iscomplexobj(z):
        out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
        out[..., 0::2] = z.real
        out[..., 1::2] = z.imag
        return out
    return z.astype(float)


def real_axes(z: Array) -> Array:
    """Interleave real and imaginary parts (identity on real arrays)."""
    return _real_axes(z)


# ---------------------------------------------------------------------------
# point-level operations
# ---------------------------------------------------------------------------


def _affine(system: MapSystem, p: ChartPoint) -> Array:
    chart = _chart(system, p.chart_id)
    coords = np.asarray(p.coords, dtype=system.dtype)
    if coords.shape != (system.k,) or not chart.contains(coords):
        raise OutOfDomain(f"{p.coords} is outside chart {p.chart_id} of {system.name}")
    return system.as_array(chart.to_affine(coords))


def _chart(system: MapSystem, chart_id: int) -> Chart:
    try:
        return system.charts[chart_id]
    except IndexError:
        raise OutOfDomain(f"{system.name} has no chart {chart_id}") from None


def locate(system: MapSystem, affine, prefer: int = 0) -> ChartPoint:
    """Express affine coordinates in a chart, keeping ``prefer`` when possible."""
    a = np.asarray(affine, dtype=system.dtype).reshape(system.k)
    a = system.wrap(a)
    order = [prefer] + [i for i in range(len(system.charts)) if i != prefer]
    for cid in order:
        chart = system.charts[cid]
        with np.errstate(all="ignore"):
            c = chart.from_affine(a)
        if chart.contains(c):
            return ChartPoint(cid, c)
    raise OutOfDomain(f"{a} is outside every chart of {system.name}")


def _check_regular(system: MapSystem, z: Array):
    d = system.singular_distance(z)
    if np.any(d <= SINGULAR_TOL):
        raise SingularPoint(f"{z.ravel()} within {SINGULAR_TOL:g} of the singular set")


def evaluate(system: MapSystem, p: ChartPoint) -> ChartPoint:
    z = _affine(system, p)
    _check_regular(system, z)
    image = system.map(z)[0]
    if not np.all(np.isfinite(image)):
        raise OutOfDomain(f"image of {p.coords} is not finite")
    return locate(system, image, prefer=p.chart_id)


def differential(system: MapSystem, p: ChartPoint) -> Array:
    """Jacobian matrix at ``p`` in affine coordinates."""
    z = _affine(system, p)
    _check_regular(system, z)
    return system.jacobian(z)[0]


def inverse_images(system: MapSystem, p: ChartPoint) -> list:
    """All solutions of ``f(y) = p`` inside the charts, each re-verified."""
    if system.inverse is None:
        raise NoBranchRule(f"{system.name} has no inverse branch rule")
    x = _affine(system, p)
    branches = system.inverse(x)[0]
    out = []
    for y in branches:
        if not np.all(np.isfinite(y)):
            continue
        scale = max(1.0, float(np.max(np.abs(x[0]))))
        if system.dist(system.map(y[None, :])[0], x[0]) > BRANCH_TOL * scale:
            raise RootFindingFailure(f"branch residual too large at {y}")
        try:
            out.append(locate(system, y, prefer=p.chart_id))
        except OutOfDomain:
            continue
    return out


def transport(system: MapSystem, a: ChartPoint, b: ChartPoint):
    """Coordinates of ``a`` and ``b`` in a chart containing both."""
    for cid in (a.chart_id, b.chart_id):
        chart = system.charts[cid]
        with np.errstate(all="ignore"):
            ca = chart.from_affine(_affine(system, a)[0]) if a.chart_id != cid else a.coords
            cb = chart.from_affine(_affine(system, b)[0]) if b.chart_id != cid else b.coords
        ca = np.asarray(ca, dtype=system.dtype)
        cb = np.asarray(cb, dtype=system.dtype)
        if chart.contains(ca) and chart.contains(cb):
            return cid, np.asarray(ca), np.asarray(cb)
    raise OutOfDomain("no common chart for the two points")


def point_distance(system: MapSystem, a: ChartPoint, b: ChartPoint) -> float:
    _, ca, cb = transport(system, a, b)
    return float(system.dist(ca, cb))


def set_distance(a_samples, b_samples, system: MapSystem | None = None) -> float:
    """Smallest max-norm distance between two finite samples."""
    a = np.asarray(a_samples)
    b = np.asarray(b_samples)
    if a.size == 0 or b.size == 0:
        raise EmptySet("set_distance needs two nonempty samples")
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if system is not None:
        return float(np.min(system.dist(a[:, None, :], b[None, :, :])))
    return float(np.min(np.max(np.abs(a[:, None, :] - b[None, :, :]), axis=-1)))


def orbit_distance(system: MapSystem, a: ChartPoint, b: ChartPoint, n: int) -> float:
    """Bowen distance: largest separation over the first ``n`` iterates."""
    best = 0.0
    for i in range(n):
        best = max(best, point_distance(system, a, b))
        if i < n - 1:
            a = evaluate(system, a)
            b = evaluate(system, b)
    return best


# ---------------------------------------------------------------------------
# batch helpers used by the estimators
# ---------------------------------------------------------------------------


def iterate(system: MapSystem, z: Array, n: int) -> tuple[Array, Array]:
    """Orbit embeddings ``(N, n, k)`` of the rows of ``z`` and a validity mask.

    A row is invalid as soon as one of its first ``n`` iterates is non-finite
    or within :data:`SINGULAR_TOL` of the singular set.
    """
    z = system.as_array(z)
    out = np.empty((z.shape[0], n, system.k), dtype=system.dtype)
    ok = np.ones(z.shape[0], dtype=bool)
    cur = z
    for i in range(n):
        out[:, i] = cur
        with np.errstate(all="ignore"):
            ok &= np.all(np.isfinite(cur), axis=1)
            ok &= np.nan_to_num(system.singular_distance(cur), nan=0.0) > SINGULAR_TOL
            if i < n - 1:
                cur = np.where(ok[:, None], cur, 0.5)
                cur = system.map(cur)
    return out, ok


def forward_image(system: MapSystem, z: Array, n: int) -> Array:
    z = system.as_array(z)
    with np.errstate(all="ignore"):
        for _ in range(n):
            z = system.map(z)
    return z


def orbit_distances(system: MapSystem, emb_a: Array, emb_b: Array) -> Array:
    """Bowen distances between orbit embeddings (broadcasting)."""
    return np.max(system.dist(emb_a, emb_b), axis=-1)


def finite_difference_jacobian(system: MapSystem, z: Array, h: float = 1e-6) -> Array:
    z = system.as_array(z)
    n, k = z.shape
    J = np.empty((n, k, k), dtype=system.dtype)
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        J[:, :, j] = (system.map(z + e) - system.map(z - e)) / (2 * h)
    return J


# ---------------------------------------------------------------------------
# built-in systems
# ---------------------------------------------------------------------------


def _box(lo, hi, axes):
    return np.full(axes, float(lo)), np.full(axes, float(hi))


def _plane_charts(k, bound):
    lo, hi = _box(-bound, bound, 2 * k)
    return (Chart(lo, hi),)


def _sphere_charts():
    lo, hi = _box(-2.0, 2.0, 2)
    with_inversion = Chart(
        lo,
        hi,
        to_affine=lambda w: 1.0 / np.asarray(w, dtype=complex),
        from_affine=lambda z: 1.0 / np.asarray(z, dtype=complex),
    )
    return (Chart(lo, hi), with_inversion)


def _circle_sampler(rng, count):
    return np.exp(2j * np.pi * rng.random(count))[:, None]


def _circle_lattice(count):
    return np.exp(2j * np.pi * np.arange(count) / count)[:, None]


def power_map(d: int) -> MapSystem:
    """``z -> z**d`` on the Riemann sphere (two charts: ``z`` and ``1/z``)."""
    d = int(d)
    if d < 2:
        raise ValueError("power map needs degree >= 2")
    roots = np.exp(2j * np.pi * np.arange(d) / d)

    def f(z):
        return z**d

    def jac(z):
        return (d * z ** (d - 1))[:, :, None]

    def inv(x):
        with np.errstate(all="ignore"):
            base = x[:, 0] ** (1.0 / d)
        return (base[:, None] * roots[None, :])[:, :, None]

    def sing(z):
        r = np.abs(z[:, 0])
        with np.errstate(divide="ignore"):
            return np.minimum(r, 1.0 / r)

    name = "doubling" if d == 2 else f"power:{d}"
    return MapSystem(
        name=name,
        k=1,
        mode="complex",
        map=f,
        jacobian=jac,
        singular_distance=sing,
        inverse=inv,
        degree=d,
        charts=_sphere_charts(),
        sampler=_circle_sampler,
        lattice=_circle_lattice,
        reference={"h_top": math.log(d), "h_mu": math.log(d), "exponents": [math.log(d)]},
        params={"d": d},
    )


def polynomial_system(coefficients, name="polynomial", bound=4.0) -> MapSystem:
    """Coordinate-wise polynomial map ``z_j -> p_j(z_j)`` in complex mode.

    ``coefficients`` is a list of coefficient lists (highest degree first),
    one per coordinate.  Inverse branches come from batched Aberth iteration
    and are the Cartesian product of the per-coordinate roots.
    """
    coeffs = [np.asarray(c, dtype=complex) for c in coefficients]
    k = len(coeffs)
    derivs = [np.polyder(c) for c in coeffs]
    degrees = [len(c) - 1 for c in coeffs]
    crit = [np.roots(dc) if len(dc) > 1 else np.array([], dtype=complex) for dc in derivs]

    def f(z):
        return np.stack([np.polyval(c, z[:, j]) for j, c in enumerate(coeffs)], axis=1)

    def jac(z):
        n = z.shape[0]
        J = np.zeros((n, k, k), dtype=complex)
        for j, dc in enumerate(derivs):
            J[:, j, j] = np.polyval(dc, z[:, j])
        return J

    def sing(z):
        d = np.full(z.shape[0], np.inf)
        for j, cp in enumerate(crit):
            if len(cp):
                d = np.minimum(d, np.min(np.abs(z[:, j, None] - cp[None, :]), axis=1))
        return d

    def inv(x):
        per = [polynomial_preimages(c, x[:, j]) for j, c in enumerate(coeffs)]
        grids = np.meshgrid(*[np.arange(dg) for dg in degrees], indexing="ij")
        idx = [g.ravel() for g in grids]
        return np.stack([per[j][:, idx[j]] for j in range(k)], axis=2)

    def sampler(rng, count):
        pts = rng.uniform(-1, 1, (count, k)) + 1j * rng.uniform(-1, 1, (count, k))
        return pts

    lo, hi = _box(-bound, bound, 2 * k)
    return MapSystem(
        name=name,
        k=k,
        mode="complex",
        map=f,
        jacobian=jac,
        singular_distance=sing,
        inverse=inv,
        degree=int(np.prod(degrees)),
        charts=(Chart(lo, hi),),
        sampler=sampler,
        params={"coefficients": [list(map(complex, c)) for c in coeffs]},
    )


def henon(c: float = -1.4, b: float = 0.3) -> MapSystem:
    """Complex Henon map ``(z, w) -> (w + z**2 + c, b*z)``."""
    c = complex(c)
    b = complex(b)
    if b == 0:
        raise ValueError("Henon map needs b != 0")

    def f(z):
        return np.stack([z[:, 1] + z[:, 0] ** 2 + c, b * z[:, 0]], axis=1)

    def jac(z):
        n = z.shape[0]
        J = np.zeros((n, 2, 2), dtype=complex)
        J[:, 0, 0] = 2 * z[:, 0]
        J[:, 0, 1] = 1.0
        J[:, 1, 0] = b
        return J

    def inv(x):
        zz = x[:, 1] / b
        return np.stack([zz, x[:, 0] - zz**2 - c], axis=1)[:, None, :]

    def sing(z):
        return np.full(z.shape[0], np.inf)

    def sampler(rng, count):
        return attractor_points(rng, count)

    def attractor_points(rng, count, transient=500):
        z = (0.1 * rng.standard_normal((count, 2))).astype(complex)
        with np.errstate(all="ignore"):
            for _ in range(transient):
                z = f(z)
        good = np.all(np.isfinite(z), axis=1) & (np.max(np.abs(z), axis=1) < 10)
        z = z[good]
        if len(z) < count:
            extra = attractor_points(rng, count - len(z), transient) if len(z) else None
            if extra is None:
                raise OutOfDomain("Henon parameters have no bounded orbits near the origin")
            z = np.concatenate([z, extra])
        return z[:count]

    name = f"henon:{_fmt(c.real)},{_fmt(b.real)}"
    return MapSystem(
        name=name,
        k=2,
        mode="complex",
        map=f,
        jacobian=jac,
        singular_distance=sing,
        inverse=inv,
        degree=1,
        charts=_plane_charts(2, 10.0),
        sampler=sampler,
        reference={"log_det": math.log(abs(b)), "h_top_pointwise_preimage": 0.0},
        params={"c": c, "b": b},
    )


def _fmt(x):
    return ("%.12g" % x) if x != int(x) else str(int(x))


def linear_system(matrix, mode="real", name=None, bound=1e3) -> MapSystem:
    """Linear map ``z -> M z`` on the plane (no periodic identification)."""
    M = np.asarray(matrix, dtype=complex if mode == "complex" else float)
    k = M.shape[0]
    Minv = np.linalg.inv(M)

    def f(z):
        return z @ M.T

    def jac(z):
        return np.broadcast_to(M, (z.shape[0], k, k)).copy()

    def inv(x):
        return (x @ Minv.T)[:, None, :]

    def sing(z):
        return np.full(z.shape[0], np.inf)

    def sampler(rng, count):
        pts = rng.uniform(-1, 1, (count, k))
        if mode == "complex":
            pts = pts + 1j * rng.uniform(-1, 1, (count, k))
        return pts

    axes = 2 * k if mode == "complex" else k
    lo, hi = _box(-bound, bound, axes)
    eig = np.sort(np.log(np.abs(np.linalg.eigvals(M))))[::-1]
    return MapSystem(
        name=name or "linear:" + ",".join(_fmt(float(np.real(v))) for v in M.ravel()),
        k=k,
        mode=mode,
        map=f,
        jacobian=jac,
        singular_distance=sing,
        inverse=inv,
        degree=1,
        charts=(Chart(lo, hi),),
        sampler=sampler,
        reference={"exponents": eig.tolist()},
        params={"matrix": M.tolist()},
    )


def cat_map() -> MapSystem:
    """Linear toral automorphism ``[[2, 1], [1, 1]]`` on ``R^2 / Z^2`` (real mode)."""
    M = np.array([[2.0, 1.0], [1.0, 1.0]])
    Minv = np.linalg.inv(M)
    lam = (3 + math.sqrt(5)) / 2

    def f(z):
        return np.mod(z @ M.T, 1.0)

    def jac(z):
        return np.broadcast_to(M, (z.shape[0], 2, 2)).copy()

    def inv(x):
        return np.mod(x @ Minv.T, 1.0)[:, None, :]

    def sing(z):
        return np.full(z.shape[0], np.inf)

    def sampler(rng, count):
        return rng.random((count, 2))

    def lattice(count):
        m = max(1, int(round(math.sqrt(count))))
        g = (np.arange(m) + 0.5) / m
        X, Y = np.meshgrid(g, g, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    lo, hi = _box(0.0, 1.0, 2)
    return MapSystem(
        name="cat",
        k=2,
        mode="real",
        map=f,
        jacobian=jac,
        singular_distance=sing,
        inverse=inv,
        degree=1,
        charts=(Chart(lo, hi),),
        period=1.0,
        sampler=sampler,
        lattice=lattice,
        reference={
            "h_top": math.log(lam),
            "h_mu": math.log(lam),
            "exponents": [math.log(lam), -math.log(lam)],
        },
    )


def rotation(alpha: float) -> MapSystem:
    """Rigid rotation ``z -> exp(i alpha) z``; ``alpha = 0`` is the identity."""
    alpha = float(alpha)
    u = np.exp(1j * alpha)

    def f(z):
        return u * z

    def jac(z):
        return np.full((z.shape[0], 1, 1), u)

    def inv(x):
        return (x / u)[:, None, :]

    def sing(z):
        return np.full(z.shape[0], np.inf)

    return MapSystem(
        name="identity" if alpha == 0 else f"rotation:{_fmt(alpha)}",
        k=1,
        mode="complex",
        map=f,
        jacobian=jac,
        singular_distance=sing,
        inverse=inv,
        degree=1,
        charts=_plane_charts(1, 4.0),
        sampler=_circle_sampler,
        lattice=_circle_lattice,
        reference={"h_top": 0.0, "h_mu": 0.0, "exponents": [0.0]},
        params={"alpha": alpha},
    )


def product(a: MapSystem, b: MapSystem) -> MapSystem:
    """Direct product ``(x, y) -> (f(x), g(y))``; modes must agree."""
    if a.mode != b.mode:
        raise ValueError("product factors must share the same mode")
    if (a.period is None) != (b.period is None):
        raise ValueError("product factors must both be periodic or both planar")
    ka, kb = a.k, b.k

    def f(z):
        return np.concatenate([a.map(z[:, :ka]), b.map(z[:, ka:])], axis=1)

    def jac(z):
        n = z.shape[0]
        J = np.zeros((n, ka + kb, ka + kb), dtype=a.dtype)
        J[:, :ka, :ka] = a.jacobian(z[:, :ka])
        J[:, ka:, ka:] = b.jacobian(z[:, ka:])
        return J

    def sing(z):
        return np.minimum(a.singular_distance(z[:, :ka]), b.singular_distance(z[:, ka:]))

    inv = None
    if a.inverse is not None and b.inverse is not None:

        def inv(x):
            ia = a.inverse(x[:, :ka])
            ib = b.inverse(x[:, ka:])
            n = x.shape[0]
            out = np.empty((n, a.degree * b.degree, ka + kb), dtype=a.dtype)
            out[:, :, :ka] = np.repeat(ia, b.degree, axis=1)
            out[:, :, ka:] = np.tile(ib, (1, a.degree, 1))
            return out

    def sampler(rng, count):
        return np.concatenate([a.sample(rng, count), b.sample(rng, count)], axis=1)

    charts = tuple(
        Chart(
            np.concatenate([ca.lower, cb.lower]),
            np.concatenate([ca.upper, cb.upper]),
            to_affine=lambda c, ca=ca, cb=cb: np.concatenate(
                [np.atleast_1d(ca.to_affine(c[..., :ka])), np.atleast_1d(cb.to_affine(c[..., ka:]))], axis=-1
            ),
            from_affine=lambda z, ca=ca, cb=cb: np.concatenate(
                [np.atleast_1d(ca.from_affine(z[..., :ka])), np.atleast_1d(cb.from_affine(z[..., ka:]))], axis=-1
            ),
        )
        for ca in a.charts
        for cb in b.charts
    )
    reference = {}
    for key in ("h_top", "h_mu"):
        if key in a.reference and key in b.reference:
            reference[key] = a.reference[key] + b.reference[key]
    if "exponents" in a.reference and "exponents" in b.reference:
        reference["exponents"] = sorted(a.reference["exponents"] + b.reference["exponents"], reverse=True)
    return MapSystem(
        name=f"product:{a.name}x{b.name}",
        k=ka + kb,
        mode=a.mode,
        map=f,
        jacobian=jac,
        singular_distance=sing,
        inverse=inv,
        degree=a.degree * b.degree,
        charts=charts,
        period=a.period,
        sampler=sampler,
        reference=reference,
    )


REGISTRY_NAMES = (
    "doubling",
    "power:d",
    "henon:c,b",
    "cat",
    "product:<sys>x<sys>",
    "identity",
    "rotation:alpha",
    "linear:a,b,c,d",
    "diag:a,b",
)


def _floats(arg, count=None):
    vals = [float(v) for v in arg.split(",") if v.strip()]
    if count is not None and len(vals) != count:
        raise ValueError(f"expected {count} parameters, got {len(vals)}")
    return vals


def get_system(spec: str) -> MapSystem:
    """Build a system from a registry string such as ``"henon:-1.4,0.3"``."""
    spec = spec.strip()
    head, _, arg = spec.partition(":")
    try:
        if head == "doubling" and not arg:
            return power_map(2)
        if head == "power":
            return power_map(int(arg))
        if head == "henon":
            c, b = _floats(arg, 2) if arg else (-1.4, 0.3)
            return henon(c, b)
        if head == "cat" and not arg:
            return cat_map()
        if head == "identity" and not arg:
            return rotation(0.0)
        if head == "rotation":
            return rotation(_floats(arg, 1)[0])
        if head == "linear":
            v = _floats(arg, 4)
            return linear_system([[v[0], v[1]], [v[2], v[3]]], mode="real")
        if head == "diag":
            v = _floats(arg)
            return linear_system(np.diag(v), mode="complex", name=f"diag:{arg}")
        if head == "product":
            left, sep, right = _split_product(arg)
            if sep:
                return product(get_system(left), get_system(right))
    except (ValueError, IndexError) as exc:
        raise KeyError(f"bad parameters in system spec {spec!r}: {exc}") from None
    raise KeyError(f"unknown system {spec!r}; registry names: {', '.join(REGISTRY_NAMES)}")


def _split_product(arg):
    # the separator is the first 'x' that leaves two parseable halves
    for i, ch in enumerate(arg):
        if ch == "x":
            left, right = arg[:i], arg[i + 1 :]
            try:
                get_system(left)
                get_system(right)
            except KeyError:
                continue
            return left, "x", right
    return arg, "", ""

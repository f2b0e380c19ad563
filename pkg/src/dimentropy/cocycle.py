"""Orbit sampling, QR Lyapunov spectra, Oseledets frames, tempering and local maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import (
    DegenerateJacobian,
    IllConditionedFrame,
    NoBranchRule,
    NoGap,
    NonPositiveInput,
    OutOfDomain,
    SingularOrbit,
    SingularPoint,
    TooShort,
)
from .systems import SINGULAR_TOL, MapSystem

MAX_JACOBIAN_CONDITION = 1e12
MAX_FRAME_CONDITION = 1e8


@dataclass(frozen=True)
class OrbitSegment:
    """Points ``x_0..x_n`` with ``f(x_i) = x_{i+1}`` and the Jacobians along them."""

    points: np.ndarray
    jacobians: np.ndarray
    min_singular_distance: float
    direction: str = "forward"

    @property
    def n(self) -> int:
        return self.points.shape[0] - 1

    @property
    def k(self) -> int:
        return self.points.shape[1]


def _finish_orbit(system, pts, direction):
    pts = np.asarray(pts)
    sd = system.singular_distance(pts)
    if np.any(~np.isfinite(pts)):
        raise OutOfDomain("orbit left the domain")
    if np.min(sd) <= SINGULAR_TOL:
        raise SingularOrbit(f"orbit passes within {SINGULAR_TOL:g} of the singular set")
    return OrbitSegment(pts, system.jacobian(pts), float(np.min(sd)), direction)


def sample_orbit(system: MapSystem, x0, n: int, direction: str = "forward", seed: Optional[int] = None) -> OrbitSegment:
    """Forward orbit of ``x0``, or a random backward chain ending at ``x0``.

    Backward chains pick one inverse branch uniformly at random per step and
    are returned in forward order, so ``points[-1] == x0`` and
    ``f(points[i]) == points[i + 1]``.
    """
    x = system.as_array(x0)[0]
    if direction == "forward":
        pts = np.empty((n + 1, system.k), dtype=system.dtype)
        pts[0] = x
        cur = x[None, :]
        with np.errstate(all="ignore"):
            for i in range(1, n + 1):
                if system.singular_distance(cur)[0] <= SINGULAR_TOL:
                    raise SingularOrbit(f"iterate {i - 1} lies on the singular set")
                cur = system.map(cur)
                if not np.all(np.isfinite(cur)):
                    raise OutOfDomain(f"iterate {i} is not finite")
                pts[i] = cur[0]
        return _finish_orbit(system, pts, direction)
    if direction != "backward":
        raise ValueError("direction must be 'forward' or 'backward'")
    if system.inverse is None:
        raise NoBranchRule(f"{system.name} has no inverse branch rule")
    if seed is None:
        raise ValueError("backward orbits need an explicit seed")
    rng = np.random.default_rng(seed)
    pts = np.empty((n + 1, system.k), dtype=system.dtype)
    pts[n] = x
    cur = x[None, :]
    for i in range(n - 1, -1, -1):
        branches = system.inverse(cur)[0]
        good = np.all(np.isfinite(branches), axis=1)
        good &= system.singular_distance(np.where(good[:, None], branches, 0.5)) > SINGULAR_TOL
        idx = np.flatnonzero(good)
        if idx.size == 0:
            raise SingularOrbit(f"no regular branch at backward step {n - i}")
        pick = idx[rng.integers(idx.size)]
        cur = branches[pick][None, :]
        pts[i] = cur[0]
    return _finish_orbit(system, pts, direction)


# ---------------------------------------------------------------------------
# Lyapunov spectrum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LyapunovSpectrum:
    exponents: np.ndarray
    stderr: np.ndarray
    multiplicities: tuple
    s: int
    l0: int
    l1: int
    n_used: int
    log_det_mean: float
    cluster_tol: np.ndarray = field(repr=False, default=None)

    @property
    def k(self) -> int:
        return len(self.exponents)

    def gap_after(self, j: int) -> float:
        """``chi_j - chi_{j+1}`` (1-based ``j``); ``inf`` past the last exponent."""
        if j <= 0 or j >= self.k:
            return math.inf
        return float(self.exponents[j - 1] - self.exponents[j])

    def resolved(self, j: int) -> bool:
        if j <= 0 or j >= self.k:
            return True
        return self.gap_after(j) > 4 * max(self.stderr[j - 1], self.stderr[j])


def _batch_stderr(series: np.ndarray, batches: int = 20) -> np.ndarray:
    n = series.shape[0]
    b = min(batches, n)
    size = n // b
    means = series[: b * size].reshape(b, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(b) if b > 1 else np.zeros(series.shape[1])


def cluster_blocks(exponents, tol):
    """Group consecutive exponents that agree within ``tol`` (array or scalar)."""
    tol = np.broadcast_to(np.asarray(tol, dtype=float), np.shape(exponents))
    blocks = [1]
    for i in range(1, len(exponents)):
        if exponents[i - 1] - exponents[i] <= max(tol[i - 1], tol[i]):
            blocks[-1] += 1
        else:
            blocks.append(1)
    return tuple(blocks)


def lyapunov_qr(orbit: OrbitSegment, warmup: Optional[int] = None, cluster_factor: float = 10.0, tol_floor: float = 1e-9) -> LyapunovSpectrum:
    """Exponents from sequential QR of the Jacobian products along ``orbit``.

    The first ``warmup`` steps (default a tenth of the orbit, capped at 1000)
    only align the frame and are not averaged; this removes the ``O(1/n)``
    transient of the initial basis.
    """
    J = orbit.jacobians[:-1] if orbit.jacobians.shape[0] > orbit.n else orbit.jacobians
    n = J.shape[0]
    if n < 100:
        raise TooShort(f"need at least 100 steps, got {n}")
    cond = np.linalg.cond(J)
    if np.any(~np.isfinite(cond)) or np.any(cond > MAX_JACOBIAN_CONDITION):
        bad = int(np.argmax(np.where(np.isfinite(cond), cond, np.inf)))
        raise DegenerateJacobian(f"Jacobian at step {bad} has condition {cond[bad]:.3g}")
    if warmup is None:
        warmup = min(n // 10, 1000)
    k = J.shape[1]
    Q = np.eye(k, dtype=J.dtype)
    logs = np.empty((n - warmup, k))
    for i in range(n):
        Q, R = np.linalg.qr(J[i] @ Q)
        if i >= warmup:
            logs[i - warmup] = np.log(np.abs(np.diagonal(R)))
    raw = logs.mean(axis=0)
    err = _batch_stderr(logs)
    order = np.argsort(-raw, kind="stable")
    exps = raw[order]
    err = err[order]
    _, logdet = np.linalg.slogdet(J[warmup:])
    tol = np.maximum(cluster_factor * err, tol_floor)
    blocks = cluster_blocks(exps, tol)
    s = int(np.sum(exps > tol))
    # the equal block right after the positive exponents
    rest = exps[s:]
    if rest.size:
        l1 = cluster_blocks(rest, tol[s:])[0]
        l0 = 1
    else:
        l0 = l1 = 0
    return LyapunovSpectrum(
        exponents=exps,
        stderr=err,
        multiplicities=blocks,
        s=s,
        l0=l0,
        l1=l1,
        n_used=n - warmup,
        log_det_mean=float(np.mean(logdet)),
        cluster_tol=tol,
    )


# ---------------------------------------------------------------------------
# Oseledets frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OseledetsFrame:
    """Estimated splitting ``E^u = E_1^u + E_2^u`` and ``E^s`` at one orbit point.

    ``C_delta`` stacks the three frames column-wise, so it sends the canonical
    block decomposition onto the estimated splitting.
    """

    base_point: np.ndarray
    index: int
    E1u: np.ndarray
    E2u: np.ndarray
    Es: np.ndarray
    C_delta: np.ndarray
    delta: float
    condition: float
    s: int
    l1: int

    @property
    def Eu(self) -> np.ndarray:
        return np.concatenate([self.E1u, self.E2u], axis=1)


def _forward_frames(J: np.ndarray, upto: int) -> list:
    """Benettin frames ``Q_i`` for ``i = 0..upto`` (``Q_0`` the identity)."""
    k = J.shape[1]
    Q = np.eye(k, dtype=J.dtype)
    out = [Q]
    for i in range(upto):
        Q, R = np.linalg.qr(J[i] @ Q)
        Q = Q * np.sign(np.diagonal(R)).conj()[None, :] if np.isrealobj(Q) else Q
        out.append(Q)
    return out


def _backward_frames(J: np.ndarray, start: int, n: int) -> dict:
    """Adjoint QR frames for indices ``start..n`` propagated from the end."""
    k = J.shape[1]
    Q = np.eye(k, dtype=J.dtype)
    out = {n: Q}
    for i in range(n - 1, start - 1, -1):
        Q, _ = np.linalg.qr(J[i].conj().T @ Q)
        out[i] = Q
    return out


def _intersection(A: np.ndarray, B: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of the ``dim`` directions of span(A) closest to span(B)."""
    if dim == 0:
        return np.zeros((A.shape[0], 0), dtype=A.dtype)
    U, _, _ = np.linalg.svd(A.conj().T @ B)
    return A @ U[:, :dim]


def _frame(point, index, Qf, Qb, s, l1, delta, dtype):
    k = Qf.shape[0]
    E1u = Qf[:, :s]
    E2u = _intersection(Qf[:, : s + l1], Qb[:, s:], l1) if l1 else np.zeros((k, 0), dtype=dtype)
    Es = Qb[:, s + l1 :]
    C = np.concatenate([E1u, E2u, Es], axis=1)
    cond = float(np.linalg.cond(C)) if C.size else 1.0
    return OseledetsFrame(point, index, E1u, E2u, Es, C, delta, cond, s, l1)


def _check_gaps(spec: LyapunovSpectrum, s: int, l1: int):
    for j in (s, s + l1):
        if 0 < j < spec.k and not spec.resolved(j):
            raise NoGap(
                f"gap chi_{j} - chi_{j + 1} = {spec.gap_after(j):.3g} is below 4 standard errors"
            )


def oseledets_frames_along(
    orbit: OrbitSegment,
    indices,
    delta: float = 0.05,
    spectrum: Optional[LyapunovSpectrum] = None,
    s: Optional[int] = None,
    l1: Optional[int] = None,
) -> list:
    """Frames at several orbit indices from one forward and one backward sweep.

    ``l1`` defaults to 0, i.e. ``E^u`` holds the positive exponents only and
    ``E^s`` everything else.
    """
    spec = spectrum or lyapunov_qr(orbit)
    s = spec.s if s is None else s
    l1 = 0 if l1 is None else l1
    _check_gaps(spec, s, l1)
    J = orbit.jacobians
    n = orbit.n
    indices = list(indices)
    fwd = _forward_frames(J, max(indices))
    bwd = _backward_frames(J, min(indices), n) if s + l1 < orbit.k or l1 else {}
    frames = []
    eye = np.eye(orbit.k, dtype=J.dtype)
    for i in indices:
        Qb = bwd.get(i, eye)
        frames.append(_frame(orbit.points[i], i, fwd[i], Qb, s, l1, delta, J.dtype))
    return frames


def oseledets_frames(system: MapSystem, orbit: OrbitSegment, delta: float = 0.05, **kw) -> OseledetsFrame:
    """Frame at the orbit midpoint."""
    if orbit.min_singular_distance <= SINGULAR_TOL:
        raise SingularOrbit("orbit touches the singular set")
    return oseledets_frames_along(orbit, [orbit.n // 2], delta=delta, **kw)[0]


# ---------------------------------------------------------------------------
# tempering
# ---------------------------------------------------------------------------


def temper_sequence(values, delta: float) -> np.ndarray:
    """Smallest ``e^delta``-tempered majorant: ``max_j a_j e^{-delta |i - j|}``.

    Computed with one forward and one backward decaying-max pass, so the
    ratio bounds hold exactly in floating point when checked as
    ``out[i + 1] >= out[i] * exp(-delta)`` (see :func:`is_tempered`).
    """
    a = np.asarray(values, dtype=float).copy()
    if delta <= 0 or not np.isfinite(delta):
        raise NonPositiveInput("delta must be positive")
    if a.size and (np.any(~(a > 0)) or np.any(~np.isfinite(a))):
        raise NonPositiveInput("tempering needs strictly positive finite values")
    decay = math.exp(-delta)
    for i in range(1, a.size):
        a[i] = max(a[i], a[i - 1] * decay)
    for i in range(a.size - 2, -1, -1):
        a[i] = max(a[i], a[i + 1] * decay)
    return a


def is_tempered(values, delta: float) -> bool:
    a = np.asarray(values, dtype=float)
    decay = math.exp(-delta)
    return bool(np.all(a[1:] >= a[:-1] * decay) and np.all(a[:-1] >= a[1:] * decay))


# ---------------------------------------------------------------------------
# normalized local maps
# ---------------------------------------------------------------------------


def op_norm(M: np.ndarray) -> np.ndarray:
    """Operator norm for the max-norm: largest absolute row sum."""
    return np.max(np.sum(np.abs(M), axis=-1), axis=-1)


@dataclass(frozen=True, eq=False)
class LocalMap:
    linear: np.ndarray
    evaluate: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    radius_r1: float
    radius_r2: float
    second_derivative_bound: float
    inverse_second_derivative_bound: float
    off_block: float
    mode: str = "complex"

    def __call__(self, w):
        return self.evaluate(w)


def _ball_samples(rng, count, k, radius, dtype):
    w = rng.uniform(-1, 1, (count, k))
    if dtype == complex:
        w = w + 1j * rng.uniform(-1, 1, (count, k))
        w = w / np.maximum(1.0, np.abs(w))
    # include the polydisk corners, where the norm is attained
    return radius * w


def _unit_directions(rng, count, k, dtype):
    if dtype == complex:
        return np.exp(2j * np.pi * rng.random((count, k)))
    return rng.choice([-1.0, 1.0], size=(count, k))


def second_derivative_sup(jac, k, radius, dtype, rng, count=256, h=1e-6):
    """Sampled sup of ``|D^2 g|`` over the ``radius`` ball via Jacobian differences."""
    w = _ball_samples(rng, count, k, radius, dtype)
    w = np.concatenate([np.zeros((1, k), dtype=w.dtype), w])
    u = _unit_directions(rng, w.shape[0], k, dtype)
    diff = (jac(w + h * u) - jac(w - h * u)) / (2 * h)
    return float(np.max(op_norm(diff)))


def _largest_radius(bound_at, r_max, iters=40):
    """Largest ``r <= r_max`` with ``bound_at(r) * r <= 1`` (bisection)."""
    if bound_at(r_max) * r_max <= 1:
        return r_max
    lo, hi = 0.0, r_max
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if bound_at(mid) * mid <= 1:
            lo = mid
        else:
            hi = mid
    return lo


def normalized_local_map(
    system: MapSystem,
    frame_x: OseledetsFrame,
    frame_fx: OseledetsFrame,
    chart_radius: float = 1.0,
    seed: int = 0,
    samples: int = 256,
) -> LocalMap:
    """``g(w) = C(fx)^{-1} (f(x + C(x) w) - f(x))`` with validity radii.

    ``radius_r1`` is the largest radius (capped at ``chart_radius``) on which
    the sampled bound ``M`` of ``|D^2 g|`` satisfies ``M <= 1/r``;
    ``radius_r2`` is the same for the local inverse.
    """
    for fr in (frame_x, frame_fx):
        if fr.condition > MAX_FRAME_CONDITION:
            raise IllConditionedFrame(f"frame condition {fr.condition:.3g} exceeds {MAX_FRAME_CONDITION:g}")
    x = np.asarray(frame_x.base_point, dtype=system.dtype)
    if system.singular_distance(x[None, :])[0] <= SINGULAR_TOL:
        raise SingularPoint("local map base point on the singular set")
    Cx = frame_x.C_delta
    Cfx_inv = np.linalg.inv(frame_fx.C_delta)
    fx = system.map(x[None, :])[0]
    k = system.k

    def g(w):
        w = np.atleast_2d(np.asarray(w, dtype=system.dtype))
        return system.delta(system.map(x + w @ Cx.T), fx) @ Cfx_inv.T

    def Dg(w):
        w = np.atleast_2d(np.asarray(w, dtype=system.dtype))
        return Cfx_inv @ system.jacobian(x + w @ Cx.T) @ Cx

    def Dg_inv(w):
        return np.linalg.inv(Dg(w))

    A = Dg(np.zeros((1, k)))[0]
    blocks = [frame_x.E1u.shape[1] + frame_x.E2u.shape[1]]
    off = 0.0
    if 0 < blocks[0] < k:
        off = float(max(op_norm(A[: blocks[0], blocks[0] :]), op_norm(A[blocks[0] :, : blocks[0]])))

    rng = np.random.default_rng(seed)
    cache = {}

    def bound(r, which):
        key = (round(r, 14), which)
        if key not in cache:
            sub = np.random.default_rng(rng.integers(1 << 32))
            J = Dg if which == 1 else Dg_inv
            cache[key] = second_derivative_sup(J, k, r, system.dtype, sub, samples)
            if which == 2:
                # derivative of Dg^{-1} along image directions: rescale by |Dg^{-1}|
                w = _ball_samples(sub, samples, k, r, system.dtype)
                cache[key] *= float(np.max(op_norm(Dg_inv(w))))
        return cache[key]

    r1 = _largest_radius(lambda r: bound(r, 1), chart_radius)
    r2 = _largest_radius(lambda r: bound(r, 2), chart_radius)
    return LocalMap(
        linear=A,
        evaluate=g,
        jacobian=Dg,
        radius_r1=r1,
        radius_r2=r2,
        second_derivative_bound=bound(r1, 1) if r1 > 0 else math.inf,
        inverse_second_derivative_bound=bound(r2, 2) if r2 > 0 else math.inf,
        off_block=off,
        mode=system.mode,
    )

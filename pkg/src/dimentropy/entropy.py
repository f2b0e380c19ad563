"""Separated families and entropy estimators.

All counts come from greedy maximal ``(n, delta)``-separated families: a
candidate is accepted when it is at ``d_n``-distance at least ``delta`` from
every earlier accepted item.  A greedy maximal family sits between the
maximum separated counts at ``delta`` and ``2 delta``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import (
    BudgetExceeded,
    EmptyInput,
    InsufficientOrbit,
    NoBranchRule,
    TreeBudgetExceeded,
)
from .graphs import GraphPatch, max_norm, slice_graph
from .systems import SINGULAR_TOL, MapSystem, iterate, real_axes

DEFAULT_TREE_BUDGET = 200_000


# ---------------------------------------------------------------------------
# separated families
# ---------------------------------------------------------------------------


@dataclass
class SeparatedFamily:
    items: list
    n: int
    delta: float
    pairwise_min: float
    order: np.ndarray = field(repr=False, default=None)
    blocked_by: np.ndarray = field(repr=False, default=None)
    seed: Optional[int] = None
    embeddings: Optional[np.ndarray] = field(repr=False, default=None)
    target: Optional[GraphPatch] = field(repr=False, default=None)

    def orbits(self) -> list:
        """Sampled forward orbits ``(n, P, k)`` of every member."""
        if self.embeddings is not None:
            return [np.transpose(self.embeddings[i : i + 1], (1, 0, 2)) for i in range(self.count)]
        return [g.orbit for g in self.items]

    @property
    def count(self) -> int:
        return len(self.items)

    def __len__(self):
        return len(self.items)


def greedy_separated(candidates: Sequence, n: int, delta: float, distance: Callable, seed: Optional[int] = None) -> SeparatedFamily:
    """Generic greedy pass with a symmetric distance oracle ``distance(a, b)``."""
    accepted = []
    blocked = np.full(len(candidates), -1)
    pmin = math.inf
    for i, c in enumerate(candidates):
        hit = -1
        for j in accepted:
            d = distance(candidates[j], c)
            if d < delta:
                hit = j
                break
        if hit < 0:
            for j in accepted:
                pmin = min(pmin, distance(candidates[j], c))
            accepted.append(i)
        else:
            blocked[i] = hit
    return SeparatedFamily(
        items=[candidates[i] for i in accepted],
        n=n,
        delta=delta,
        pairwise_min=pmin,
        order=np.asarray(accepted, dtype=int),
        blocked_by=blocked,
        seed=seed,
    )


def _prefilter_coords(system: MapSystem, emb: np.ndarray) -> np.ndarray:
    """Real coordinates of a few iterates; Chebyshev distance there bounds ``d_n`` below."""
    n = emb.shape[1]
    picks = sorted({0, n // 2, n - 1})
    return real_axes(emb[:, picks, :].reshape(emb.shape[0], -1))


def close_pairs(system: MapSystem, emb: np.ndarray, delta: float) -> np.ndarray:
    """All pairs ``i < j`` of orbit embeddings with ``d_n < delta``."""
    if emb.shape[0] < 2:
        return np.zeros((0, 2), dtype=int)
    coords = _prefilter_coords(system, emb)
    boxsize = None
    if system.period is not None:
        coords = np.mod(coords, system.period)
        boxsize = system.period
    # unbalanced, non-compact trees build much faster and give the same pairs
    tree = cKDTree(coords, boxsize=boxsize, balanced_tree=False, compact_nodes=False)
    pairs = tree.query_pairs(delta, p=np.inf, output_type="ndarray")
    if pairs.size == 0:
        return pairs.reshape(0, 2)
    out = []
    for chunk in np.array_split(pairs, max(1, pairs.shape[0] // 200_000)):
        d = np.max(system.dist(emb[chunk[:, 0]], emb[chunk[:, 1]]), axis=1)
        out.append(chunk[d < delta])
    pairs = np.concatenate(out)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def greedy_points(system: MapSystem, emb: np.ndarray, delta: float, seed: Optional[int] = None) -> SeparatedFamily:
    """Greedy separated family of point orbits given as embeddings ``(N, n, k)``.

    Items are candidate indices in input order.
    """
    N = emb.shape[0]
    n = emb.shape[1]
    pairs = close_pairs(system, emb, delta)
    starts = np.searchsorted(pairs[:, 0], np.arange(N + 1)) if pairs.size else np.zeros(N + 1, dtype=int)
    nbrs = pairs[:, 1] if pairs.size else np.zeros(0, dtype=int)
    blocked = np.full(N, -1)
    accepted = []
    for i in range(N):
        if blocked[i] >= 0:
            continue
        accepted.append(i)
        js = nbrs[starts[i] : starts[i + 1]]
        free = js[blocked[js] < 0]
        blocked[free] = i
    acc = np.asarray(accepted, dtype=int)
    pmin = _pairwise_min(system, emb[acc]) if acc.size > 1 else math.inf
    return SeparatedFamily(list(acc), n, delta, pmin, acc, blocked, seed, embeddings=emb[acc])


def _pairwise_min(system, emb, max_items=1500):
    if emb.shape[0] > max_items:
        # nearest-neighbour search in the prefilter space, then exact d_n
        coords = _prefilter_coords(system, emb)
        if system.period is not None:
            coords = np.mod(coords, system.period)
        tree = cKDTree(coords, boxsize=system.period, balanced_tree=False, compact_nodes=False)
        _, idx = tree.query(coords, k=min(8, emb.shape[0]), p=np.inf)
        a = np.repeat(np.arange(emb.shape[0]), idx.shape[1] - 1)
        b = idx[:, 1:].ravel()
        return float(np.min(np.max(system.dist(emb[a], emb[b]), axis=1)))
    best = math.inf
    for i in range(emb.shape[0] - 1):
        d = np.max(system.dist(emb[i + 1 :], emb[i]), axis=1)
        best = min(best, float(d.min()))
    return best


# ---------------------------------------------------------------------------
# estimates
# ---------------------------------------------------------------------------


def _slope(ns, logs):
    ns = np.asarray(ns, dtype=float)
    logs = np.asarray(logs, dtype=float)
    if ns.size < 2:
        return float(logs[0] / ns[0]) if ns.size else math.nan
    return float(np.polyfit(ns, logs, 1)[0])


@dataclass
class EntropyEstimate:
    """Counts per ``(delta, n)``, rates ``log(count)/n`` and the extrapolated growth rate.

    ``extrapolated`` is the least-squares slope of ``log count`` against
    ``n`` over the top half of the ``n`` schedule at the smallest ``delta``;
    ``slopes`` holds the same slope for every ``delta`` and ``spread`` their
    range (the delta trend).
    """

    quantity: str
    m: Optional[int]
    l: Optional[int]
    rows: list
    extrapolated: float = math.nan
    slopes: dict = field(default_factory=dict)
    spread: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    families: dict = field(default_factory=dict, repr=False)

    @property
    def rates(self) -> list:
        return [math.log(c) / n if c > 0 else -math.inf for (_, n, c) in self.rows]

    @property
    def deltas(self) -> list:
        return sorted({r[0] for r in self.rows}, reverse=True)

    @property
    def ns(self) -> list:
        return sorted({r[1] for r in self.rows})

    def count(self, delta, n) -> int:
        for d, nn, c in self.rows:
            if d == delta and nn == n:
                return c
        raise KeyError((delta, n))

    def fit_points(self, delta) -> list:
        """``(n, count)`` pairs behind the slope at ``delta``.

        Saturated rows (listed in ``diagnostics['saturated']``) are dropped
        first, then the top half of the remaining horizons is kept, then
        zero counts are dropped.
        """
        sat = {(float(d), int(n)) for d, n in self.diagnostics.get("saturated", [])}
        ns = [n for n in self.ns if (delta, n) not in sat]
        top = ns[len(ns) // 2 :] if len(ns) > 2 else ns
        return [(n, c) for (dd, n, c) in self.rows if dd == delta and n in top and c > 0]

    def finalize(self) -> "EntropyEstimate":
        self.slopes = {}
        for d in self.deltas:
            pts = self.fit_points(d)
            if pts:
                self.slopes[d] = _slope([p[0] for p in pts], [math.log(p[1]) for p in pts])
        if self.slopes:
            vals = list(self.slopes.values())
            self.extrapolated = self.slopes[min(self.slopes)]
            self.spread = float(max(vals) - min(vals))
        self.diagnostics["monotone_in_delta"] = self.monotone_in_delta()
        return self

    def monotone_in_delta(self) -> bool:
        for n in self.ns:
            cs = [self.count(d, n) for d in sorted(self.deltas)]
            if any(a < b for a, b in zip(cs, cs[1:])):
                return False
        return True

    def csv_rows(self) -> list:
        m = "" if self.m is None else self.m
        l = "" if self.l is None else self.l
        return [
            [self.quantity, m, l, "%.12g" % d, n, c, "%.12g" % r]
            for (d, n, c), r in zip(self.rows, self.rates)
        ]

    def to_csv(self) -> str:
        lines = ["quantity,m,l,delta,n,count,rate"]
        lines += [",".join(str(v) for v in row) for row in self.csv_rows()]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "m": self.m,
            "l": self.l,
            "rows": [
                {"delta": float("%.12g" % d), "n": n, "count": c, "rate": _j(r)}
                for (d, n, c), r in zip(self.rows, self.rates)
            ],
            "extrapolated": _j(self.extrapolated),
            "slopes": {("%.12g" % d): _j(v) for d, v in sorted(self.slopes.items(), reverse=True)},
            "spread": _j(self.spread),
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def _j(x):
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return float("%.12g" % x)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _j(obj)
    return obj


def _quantity_name(quantity, m=None, l=None):
    return f"dim({m},{l})" if quantity == "dim" else quantity


# ---------------------------------------------------------------------------
# topological entropy
# ---------------------------------------------------------------------------


def htop_candidates(system: MapSystem, samples: int, seed: int, lattice: Optional[int] = None) -> np.ndarray:
    """Lattice points followed by seeded random points of the sampling region."""
    rng = np.random.default_rng(seed)
    parts = []
    if lattice and system.lattice is not None:
        parts.append(system.as_array(system.lattice(lattice)))
    if samples:
        parts.append(system.as_array(system.sample(rng, samples)))
    if not parts:
        raise EmptyInput("no candidates requested")
    return np.concatenate(parts)


def estimate_htop(
    system: MapSystem,
    delta_schedule,
    n_schedule,
    samples: int = 1000,
    seed: int = 0,
    lattice: Optional[int] = 4096,
    max_lattice: int = 2**17,
    saturation: float = 0.25,
    keep_families: bool = False,
) -> EntropyEstimate:
    """Greedy separated counts over a lattice plus seeded random points.

    When a count exceeds ``saturation`` times the pool size the lattice is
    doubled (up to ``max_lattice``) and the row recomputed, so the counts are
    not capped by the pool.  Rows for a fixed ``n`` always share one pool.
    Rows still above the threshold at ``max_lattice`` are listed as
    saturated and left out of the slope fit.
    """
    n_schedule = sorted(int(n) for n in n_schedule)
    delta_schedule = sorted((float(d) for d in delta_schedule), reverse=True)
    size = lattice if system.lattice is not None else None
    rows = {}
    fams = {}
    pools = {}
    saturated = []
    rejected = 0
    for n in n_schedule:
        while True:
            cands = htop_candidates(system, samples, seed, size)
            emb, ok = iterate(system, cands, n)
            emb = emb[ok]
            found = {d: greedy_points(system, emb, d, seed) for d in delta_schedule}
            worst = max(f.count for f in found.values())
            if size is None or worst <= saturation * emb.shape[0] or 2 * size > max_lattice:
                break
            size *= 2
        rejected += int((~ok).sum())
        pools[n] = int(cands.shape[0])
        for d, fam in found.items():
            rows[(d, n)] = fam.count
            if size is not None and fam.count > saturation * emb.shape[0]:
                saturated.append([d, n])
            if keep_families:
                fams[(d, n)] = fam
    ordered = [(d, n, rows[(d, n)]) for d in delta_schedule for n in n_schedule]
    est = EntropyEstimate("top", None, None, ordered, families=fams)
    est.diagnostics.update({"pool_sizes": pools, "saturated": saturated, "rejected_singular": rejected, "seed": seed})
    return est.finalize()


# ---------------------------------------------------------------------------
# Brin-Katok
# ---------------------------------------------------------------------------


def long_orbit(system: MapSystem, length: int, seed: int, transient: int = 100) -> np.ndarray:
    """A typical orbit for the reference measure.

    Systems whose forward orbits are numerically unstable on their invariant
    set (expanding circle maps) use a backward orbit with uniformly random
    branches, read in forward order.
    """
    from .cocycle import sample_orbit

    rng = np.random.default_rng(seed)
    x0 = system.sample(rng, 1)[0]
    if system.degree > 1 and system.inverse is not None:
        return sample_orbit(system, x0, length - 1, "backward", seed=seed).points
    orb = sample_orbit(system, x0, length + transient - 1, "forward").points
    return orb[transient:]


def estimate_metric_entropy(
    system: MapSystem,
    orbit: np.ndarray,
    delta: float,
    n_schedule,
    base_points: int = 200,
    seed: int = 0,
) -> EntropyEstimate:
    """Brin-Katok rates from empirical Bowen-ball frequencies along ``orbit``.

    ``count`` in each row is the mean number of orbit windows inside the
    Bowen ball; the row rate is ``-mean log(freq) / n``.
    """
    orbit = np.asarray(orbit)
    L = orbit.shape[0]
    n_max = max(n_schedule)
    windows = L - n_max + 1
    if windows < 10 * base_points or windows < 100:
        raise InsufficientOrbit(f"orbit of length {L} is too short for n = {n_max} and {base_points} base points")
    idx = np.arange(n_max)[None, :] + np.arange(windows)[:, None]
    emb_all = orbit[idx]
    rng = np.random.default_rng(seed)
    base = np.sort(rng.choice(windows, size=min(base_points, windows), replace=False))
    rows = []
    neg_logs = {}
    for n in n_schedule:
        emb = emb_all[:, :n]
        coords = _prefilter_coords(system, emb)
        if system.period is not None:
            coords = np.mod(coords, system.period)
        tree = cKDTree(coords, boxsize=system.period, balanced_tree=False, compact_nodes=False)
        hits = tree.query_ball_point(coords[base], delta, p=np.inf)
        counts = np.empty(base.size)
        for b, (i, cand) in enumerate(zip(base, hits)):
            cand = np.asarray(cand, dtype=int)
            d = np.max(system.dist(emb[cand], emb[i]), axis=1)
            counts[b] = np.count_nonzero(d < delta)
        freq = counts / windows
        neg_logs[n] = float(np.mean(-np.log(freq)))
        if np.median(counts) < 5:
            warnings.warn(f"Bowen balls at n={n} hold a median of {np.median(counts):.0f} orbit points; orbit may be too short")
        rows.append((float(delta), int(n), int(round(float(np.mean(counts))))))
    est = EntropyEstimate("metric", None, None, rows)
    ns = sorted(neg_logs)
    top = ns[len(ns) // 2 :] if len(ns) > 2 else ns
    est.slopes = {float(delta): _slope(top, [neg_logs[n] for n in top])}
    est.extrapolated = est.slopes[float(delta)]
    est.spread = 0.0
    est.diagnostics.update({
        "orbit_length": L,
        "base_points": int(base.size),
        "neg_log_freq": {int(n): neg_logs[n] for n in ns},
        "rates": {int(n): neg_logs[n] / n for n in ns},
    })
    return est


# ---------------------------------------------------------------------------
# preimage trees
# ---------------------------------------------------------------------------


def preimage_tree(system: MapSystem, x, n: int, budget: int = DEFAULT_TREE_BUDGET):
    """Levels ``0..n`` of the preimage tree of ``x`` with parent links.

    Branches within the singular tolerance or outside the domain are pruned.
    Returns ``(levels, parents)`` where ``levels[j]`` has shape ``(N_j, k)``.
    """
    if system.inverse is None:
        raise NoBranchRule(f"{system.name} has no inverse branch rule")
    levels = [system.as_array(x)[:1]]
    parents = [np.zeros(1, dtype=int)]
    total = 1
    for _ in range(n):
        cur = levels[-1]
        br = system.inverse(cur)
        nb = br.shape[1]
        flat = br.reshape(-1, system.k)
        par = np.repeat(np.arange(cur.shape[0]), nb)
        with np.errstate(all="ignore"):
            good = np.all(np.isfinite(flat), axis=1)
            good &= np.nan_to_num(system.singular_distance(np.where(good[:, None], flat, 0.5)), nan=0.0) > SINGULAR_TOL
        flat = system.wrap(flat[good])
        total += flat.shape[0]
        if total > budget:
            raise TreeBudgetExceeded(f"preimage tree exceeds {budget} nodes")
        levels.append(flat)
        parents.append(par[good])
    return levels, parents


def leaf_embeddings(levels, parents, n: int) -> np.ndarray:
    """Orbit embeddings ``(N_n, n, k)`` of the depth-``n`` leaves."""
    leaves = levels[n]
    N = leaves.shape[0]
    emb = np.empty((N, n, leaves.shape[1]), dtype=leaves.dtype)
    idx = np.arange(N)
    for i in range(n):
        level = n - i
        emb[:, i] = levels[level][idx]
        idx = parents[level][idx]
    return emb


def _targets(system, count, seed):
    rng = np.random.default_rng(seed)
    return system.as_array(system.sample(rng, count))


def estimate_pointwise_preimage_entropy(
    system: MapSystem,
    delta_schedule,
    n_schedule,
    target_samples: int = 4,
    seed: int = 0,
    budget: int = DEFAULT_TREE_BUDGET,
    keep_families: bool = False,
) -> EntropyEstimate:
    targets = _targets(system, target_samples, seed)
    return _point_target_estimate(system, targets, delta_schedule, n_schedule, budget, seed, "preimage", 0, 0, keep_families)


def _point_target_estimate(system, targets, delta_schedule, n_schedule, budget, seed, quantity, m, l, keep_families):
    n_max = max(n_schedule)
    trees = [preimage_tree(system, t, n_max, budget) for t in targets]
    rows = []
    fams = {}
    best_target = {}
    for d in delta_schedule:
        for n in n_schedule:
            best = None
            for ti, (levels, parents) in enumerate(trees):
                fam = greedy_points(system, leaf_embeddings(levels, parents, n), d, seed)
                fam.target = point_patch(system, targets[ti], d)
                if best is None or fam.count > best[1].count:
                    best = (ti, fam)
            rows.append((float(d), int(n), best[1].count))
            best_target[(d, n)] = best[0]
            if keep_families:
                fams[(d, n)] = best[1]
    est = EntropyEstimate(quantity, m, l, rows, families=fams)
    est.diagnostics.update({
        "targets": int(len(targets)),
        "leaves": [int(t[0][-1].shape[0]) for t in trees],
        "seed": seed,
    })
    return est.finalize()


# ---------------------------------------------------------------------------
# admissible targets and cube selection
# ---------------------------------------------------------------------------


def _random_unitary(rng, k, complex_mode):
    Z = rng.standard_normal((k, k))
    if complex_mode:
        Z = Z + 1j * rng.standard_normal((k, k))
    Q, R = np.linalg.qr(Z)
    return Q * (np.diagonal(R) / np.abs(np.diagonal(R)))[None, :]


def point_patch(system: MapSystem, x, radius: float = 0.0) -> GraphPatch:
    """A point viewed as a 0-dimensional graph (base ``B_0(x, r) = {x}``).

    ``radius`` is kept so that extending the point gives a ball of that radius.
    """
    x = system.as_array(x)[0]
    eye = np.eye(system.k, dtype=system.dtype)
    return GraphPatch(
        base_frame=eye[:, :0],
        complement_frame=eye,
        origin=x,
        center=np.zeros(0, dtype=system.dtype),
        radius=float(radius),
        values=np.zeros(system.k, dtype=system.dtype),
        mode=system.mode,
        lip_bound=0.0,
        rule=lambda X, k=system.k, dt=system.dtype: np.zeros((X.shape[0], k), dtype=dt),
    )


def ball_patch(system: MapSystem, x, radius: float, resolution: int = 5) -> GraphPatch:
    """The coordinate ball ``B_k(x, radius)`` as a full-dimensional graph."""
    from .graphs import make_patch

    x = system.as_array(x)[0]
    return make_patch(
        lambda X: np.zeros((X.shape[0], 0)),
        system.k,
        radius,
        origin=x,
        mode=system.mode,
        resolution=resolution,
        lip_bound=0.0,
    )


def sample_admissible_targets(system: MapSystem, m: int, delta: float, count: int, seed: int, resolution: int = 5) -> list:
    """Random members of ``X_m^delta``: flat and low-Lipschitz linear graphs through sampled centers."""
    from .graphs import make_patch

    if not 0 <= m <= system.k:
        raise ValueError(f"m must lie in [0, {system.k}]")
    rng = np.random.default_rng(seed)
    centers = system.as_array(system.sample(rng, count))
    out = []
    for i in range(count):
        if m == 0:
            out.append(point_patch(system, centers[i], delta))
            continue
        if m == system.k:
            out.append(ball_patch(system, centers[i], delta, resolution))
            continue
        U = _random_unitary(rng, system.k, system.mode == "complex")
        c = system.k - m
        if i % 2 == 0:
            L = np.zeros((c, m), dtype=system.dtype)
        else:
            L = rng.uniform(-1, 1, (c, m)).astype(system.dtype)
            if system.mode == "complex":
                L = L * np.exp(2j * np.pi * rng.random((c, m)))
            rows = np.sum(np.abs(L), axis=1, keepdims=True)
            L = 0.5 * L / np.maximum(rows, 1e-12)
        out.append(
            make_patch(
                lambda X, L=L: X @ L.T,
                m,
                delta,
                base_frame=U[:, :m],
                complement_frame=U[:, m:],
                origin=centers[i],
                mode=system.mode,
                resolution=resolution,
            )
        )
    return out


def cube_select_target(forward_images, cube_size: float, system: Optional[MapSystem] = None, resolution: int = 5):
    """Most occupied cube of the subdivision with side ``cube_size``.

    Returns the ball inscribed in that cube as a full-dimensional patch and
    the cube's occupancy.  Ties go to the lexicographically smallest cube
    index.
    """
    pts = np.asarray(forward_images)
    if pts.size == 0:
        raise EmptyInput("no forward images to subdivide")
    if pts.ndim == 1:
        pts = pts[:, None]
    r = real_axes(pts)
    cells = np.floor(r / cube_size).astype(np.int64)
    uniq, counts = np.unique(cells, axis=0, return_counts=True)
    best = int(np.argmax(counts))
    corner = (uniq[best] + 0.5) * cube_size
    if np.iscomplexobj(pts):
        center = corner[0::2] + 1j * corner[1::2]
    else:
        center = corner
    mode = "complex" if np.iscomplexobj(pts) else "real"
    if system is not None:
        patch = ball_patch(system, center, cube_size / 2, resolution)
    else:
        from .graphs import make_patch

        patch = make_patch(lambda X: np.zeros((X.shape[0], 0)), pts.shape[1], cube_size / 2,
                           origin=center, mode=mode, resolution=resolution, lip_bound=0.0)
    return patch, int(counts[best])


# ---------------------------------------------------------------------------
# graph families in preimages
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PreimageGraph:
    """A member of a graph family in ``f^{-n}(Delta)`` with its sampled forward orbit."""

    patch: GraphPatch
    orbit: np.ndarray  # (n, P, k): f^i of the patch samples
    center_index: int

    @property
    def centers(self) -> np.ndarray:
        return self.orbit[:, self.center_index]


def _orbit_samples(system: MapSystem, pts: np.ndarray, n: int):
    emb, ok = iterate(system, pts, n + 1)
    return np.transpose(emb, (1, 0, 2)), ok


def graph_distance(system: MapSystem, a: PreimageGraph, b: PreimageGraph, n: Optional[int] = None) -> float:
    """``max_{i<n} set_distance(f^i A, f^i B)`` on the sampled orbits."""
    n = a.orbit.shape[0] if n is None else n
    best = 0.0
    for i in range(n):
        d = system.dist(a.orbit[i][:, None, :], b.orbit[i][None, :, :])
        best = max(best, float(d.min()))
    return best


def greedy_graphs(system: MapSystem, graphs: list, n: int, delta: float, seed=None) -> SeparatedFamily:
    """Greedy separated family of graphs with a center-orbit prefilter.

    The center orbit distance bounds the set distance from above, and the
    center distance minus both sample spreads bounds it from below; only
    ambiguous pairs are resolved on the samples.
    """
    if not graphs:
        return SeparatedFamily([], n, delta, math.inf, np.zeros(0, int), np.zeros(0, int), seed)
    C = np.stack([g.centers[:n] for g in graphs])
    spread = np.stack([
        np.max(system.dist(g.orbit[:n], g.centers[:n, None, :]), axis=1) for g in graphs
    ])
    accepted = []
    blocked = np.full(len(graphs), -1)
    pmin = math.inf
    for i, g in enumerate(graphs):
        hit = -1
        if accepted:
            acc = np.asarray(accepted)
            cd = system.dist(C[acc], C[i][None])  # (A, n)
            upper = np.max(cd, axis=1)
            lower = np.max(cd - spread[acc] - spread[i][None], axis=1)
            close = np.flatnonzero(upper < delta)
            if close.size:
                hit = int(acc[close[0]])
            else:
                for j in acc[lower < delta]:
                    d = graph_distance(system, graphs[j], g, n)
                    if d < delta:
                        hit = int(j)
                        break
        if hit < 0:
            accepted.append(i)
        else:
            blocked[i] = hit
    if len(accepted) > 1 and len(accepted) <= 200:
        pmin = min(
            graph_distance(system, graphs[a], graphs[b], n)
            for ii, a in enumerate(accepted)
            for b in accepted[ii + 1 :]
        )
    return SeparatedFamily([graphs[i] for i in accepted], n, delta, pmin, np.asarray(accepted), blocked, seed)


def _leaves_of(system, points, n, budget):
    """Depth-``n`` preimages of each row of ``points``; ``(leaf, target index)`` arrays."""
    if system.invertible:
        cur = system.as_array(points)
        for _ in range(n):
            cur = system.wrap(system.inverse(cur)[:, 0, :])
        ok = np.all(np.isfinite(cur), axis=1)
        return cur[ok], np.flatnonzero(ok)
    leaves, owners = [], []
    total = 0
    for i, p in enumerate(system.as_array(points)):
        levels, _ = preimage_tree(system, p, n, budget)
        total += levels[-1].shape[0]
        if total > budget:
            raise BudgetExceeded(f"more than {budget} preimage leaves")
        leaves.append(levels[-1])
        owners.append(np.full(levels[-1].shape[0], i))
    return np.concatenate(leaves), np.concatenate(owners)


def _tangent_frames(system, leaves, n, directions):
    """Push base directions of the target back along the inverse orbit.

    ``directions`` has shape ``(N, k, l)``; the returned orthonormal frames
    span ``Df^n(leaf)^{-1} directions``.
    """
    emb, ok = iterate(system, leaves, n)
    k = system.k
    M = np.broadcast_to(np.eye(k, dtype=system.dtype), (leaves.shape[0], k, k)).copy()
    for i in range(n):
        M = system.jacobian(emb[:, i]) @ M
    T = np.linalg.solve(M, directions)
    l = directions.shape[2]
    frames = np.empty((leaves.shape[0], k, k), dtype=system.dtype)
    stretch = np.empty(leaves.shape[0])
    for j in range(leaves.shape[0]):
        Z = np.concatenate([T[j], np.eye(k, dtype=system.dtype)], axis=1)
        Q, _ = np.linalg.qr(Z)
        frames[j] = Q
        stretch[j] = np.linalg.norm(T[j]) / max(np.linalg.norm(directions[j]), 1e-300)
    return frames, stretch, ok


def _shoot(system, Delta, y, frame, l, radius, n, resolution, newton_steps=12):
    """Fit ``f^{-n}(Delta)`` near ``y`` as a graph over the tangent ball.

    Solves ``f^n(y + T X + N Y) in Delta`` for ``Y`` at every lattice node
    ``X`` (realified Newton with finite differences).  Returns ``(X, Y, ok)``.
    """
    from .graphs import _from_real, _lattice, _to_real

    cm = system.mode == "complex"
    k = system.k
    c = k - l
    X, _ = _lattice(np.zeros(l, dtype=system.dtype), radius, l, resolution, cm)
    T = frame[:, :l]
    N = frame[:, l:]
    if c == 0:
        return X, np.zeros((X.shape[0], 0), dtype=system.dtype), np.ones(X.shape[0], bool)

    def resid(Yr):
        Y = _from_real(Yr, cm)
        P = y + X @ T.T + Y @ N.T
        with np.errstate(all="ignore"):
            Q = P
            for _ in range(n):
                Q = system.map(Q)
        base, comp = Delta.project(system.delta(Q, Delta.origin) + Delta.origin)
        return _to_real(comp - Delta(base), cm)

    Yr = np.zeros((X.shape[0], (2 if cm else 1) * c))
    h = 1e-7
    for _ in range(newton_steps):
        r = resid(Yr)
        if np.all(np.isfinite(r)) and np.max(np.abs(r)) < 1e-11:
            break
        J = np.empty(r.shape + (Yr.shape[1],))
        for j in range(Yr.shape[1]):
            e = np.zeros(Yr.shape[1])
            e[j] = h
            J[:, :, j] = (resid(Yr + e) - resid(Yr - e)) / (2 * h)
        with np.errstate(all="ignore"):
            try:
                step = np.linalg.solve(J, r[..., None])[..., 0]
            except np.linalg.LinAlgError:
                break
        Yr = Yr - np.nan_to_num(step)
    r = resid(Yr)
    ok = np.all(np.isfinite(r), axis=1) & (np.max(np.abs(r), axis=1) < 1e-8)
    return X, _from_real(Yr, cm), ok


def enumerate_preimage_graphs(
    system: MapSystem,
    Delta: GraphPatch,
    l: int,
    n: int,
    delta: float,
    budget: int = 2000,
    seed: int = 0,
    resolution: int = 5,
    centers_per_axis: Optional[int] = None,
) -> list:
    """Members of ``X_l^{delta,n}`` inside ``f^{-n}(Delta)``.

    ``l = 0`` returns the preimage leaves of sampled points of ``Delta``.
    For ``l >= 1`` the target is sliced down to dimension ``l``, a lattice of
    centers on it is pulled back, and around every pulled-back center the
    preimage is re-fitted as a graph over the tangent ball of radius
    ``e^{-delta n}`` by shooting.  Candidates with Lipschitz constant above 1,
    unconverged nodes, forward images leaving ``Delta``, iterates on the
    singular set or outside the chart domain are discarded.
    """
    if l > Delta.l:
        raise ValueError("l cannot exceed the dimension of the target")
    if system.inverse is None:
        raise NoBranchRule(f"{system.name} has no inverse branch rule")
    D = Delta
    while D.l > l:
        D = slice_graph(D)
    radius = math.exp(-delta * n)

    # lattice of centers on D
    if D.l == 0:
        base_pts = np.zeros((1, 0), dtype=system.dtype)
    else:
        base_pts = _center_lattice(D, centers_per_axis, system, n, budget)
    targets = system.wrap(D.embed(base_pts)) if D.l else system.as_array(D.embed(base_pts))
    leaves, owners = _leaves_of(system, targets, n, budget)
    if leaves.shape[0] > budget:
        raise BudgetExceeded(f"{leaves.shape[0]} preimage centers exceed budget {budget}")
    if l == 0:
        out = []
        emb, ok = _orbit_samples(system, leaves, n)
        for j in range(leaves.shape[0]):
            if not ok[j]:
                continue
            p = point_patch(system, leaves[j])
            p.admissibility.update({"delta": delta, "n": n, "singular_distances": [float(v) for v in system.singular_distance(emb[:n, j])]})
            out.append(PreimageGraph(p, emb[:n, j : j + 1], 0))
        return out

    # graph candidates must keep their whole orbit inside the charted domain
    lemb, lok = _orbit_samples(system, leaves, n)
    lok &= np.all([system.in_domain(lemb[i]) for i in range(n + 1)], axis=0)
    leaves, owners = leaves[lok], owners[lok]
    frames, _, okf = _tangent_frames(system, leaves, n, _target_tangents(D, base_pts[owners]))
    out = []
    from .graphs import GraphPatch as GP

    cm = system.mode == "complex"
    for j in range(leaves.shape[0]):
        if not okf[j]:
            continue
        X, Y, ok = _shoot(system, D, leaves[j], frames[j], l, radius, n, resolution)
        if not np.all(ok):
            continue
        shape = (resolution,) * ((2 if cm else 1) * l)
        patch = GP(
            base_frame=frames[j][:, :l],
            complement_frame=frames[j][:, l:],
            origin=leaves[j],
            center=np.zeros(l, dtype=system.dtype),
            radius=radius,
            values=Y.reshape(shape + (system.k - l,)),
            mode=system.mode,
            lip_bound=0.0,
        )
        lip = patch.sampled_lipschitz()
        if lip > 1:
            continue
        pts = system.wrap(patch.points())
        emb, okp = _orbit_samples(system, pts, n)
        if not np.all(okp) or not all(np.all(system.in_domain(emb[i])) for i in range(n + 1)):
            continue
        fwd = emb[n]
        dev = D.deviation(system.delta(fwd, D.origin) + D.origin)
        if not np.all(dev <= 1e-6):
            continue
        sd = [float(np.min(system.singular_distance(emb[i]))) for i in range(n)]
        patch = patch.with_(lip_bound=lip, admissibility={"delta": delta, "n": n, "singular_distances": sd,
                                                         "containment": float(np.max(dev))})
        cidx = int(np.argmin(max_norm(patch.project(pts)[0])))
        out.append(PreimageGraph(patch, emb[:n], cidx))
    return out


def _target_tangents(D: GraphPatch, base_pts: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Ambient tangent vectors of ``D`` at base points, shape ``(N, k, l)``."""
    cols = []
    for j in range(D.l):
        e = np.zeros(D.l, dtype=D.dtype)
        e[j] = h
        cols.append((D.embed(base_pts + e) - D.embed(base_pts - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _center_lattice(D: GraphPatch, per_axis: Optional[int], system: MapSystem, n: int, budget: int) -> np.ndarray:
    """Centers on the base ball of ``D``, refined by the pull-back stretch.

    Without an explicit ``per_axis`` the spacing is chosen from the stretch of
    ``Df^{-n}`` at the center, capped by ``budget``.  ``per_axis=1`` gives the
    center alone.
    """
    from .graphs import _lattice

    cm = D.complex_mode
    if per_axis is not None:
        X, _ = _lattice(D.center, D.radius, D.l, per_axis, cm)
        return X[D.in_ball(X)]
    per_axis = 3
    center_pt = D.embed(D.center[None, :])
    try:
        leaves, _ = _leaves_of(system, system.wrap(center_pt), n, budget)
    except (BudgetExceeded, TreeBudgetExceeded):
        leaves = np.zeros((0, system.k))
    stretch = 1.0
    if leaves.shape[0]:
        tang = _target_tangents(D, D.center[None, :])
        _, st, _ = _tangent_frames(system, leaves[:1], n, tang)
        stretch = float(st[0]) if np.isfinite(st[0]) else 1.0
    per_axis = max(per_axis, int(math.ceil(4 * stretch)) + 1)
    axes = (2 if cm else 1) * D.l
    per_leaf = max(1, leaves.shape[0])
    cap = max(2, int((budget / per_leaf) ** (1.0 / axes)))
    per_axis = min(per_axis, cap)
    if per_axis % 2 == 0:
        per_axis += 1 if per_axis + 1 <= cap or per_axis < 3 else -1
    X, _ = _lattice(D.center, D.radius, D.l, max(per_axis, 1), cm)
    X = X[D.in_ball(X)]
    return X


def estimate_dimensional_entropy(
    system: MapSystem,
    m: int,
    l: int,
    delta_schedule,
    n_schedule,
    target_count: int = 4,
    budget: int = 2000,
    seed: int = 0,
    samples: int = 1000,
    lattice: Optional[int] = 4096,
    tree_budget: int = DEFAULT_TREE_BUDGET,
    seed_families: Optional[dict] = None,
    keep_families: bool = False,
    resolution: int = 5,
) -> EntropyEstimate:
    """Lower-bound estimate of ``h_(m,l)`` over sampled and pigeonhole targets.

    ``seed_families`` maps ``(delta, n)`` to :class:`SeparatedFamily`
    objects whose members lie in ``f^{-n}`` of their ``target`` (an admissible
    target for this ``m``); each one is greedily re-separated as an extra
    pool, so matched-seed comparisons are exact.
    """
    if not 0 <= l <= m <= system.k:
        raise ValueError("need 0 <= l <= m <= k")
    if m == 0:
        targets = _targets(system, target_count, seed)
        est = _point_target_estimate(system, targets, delta_schedule, n_schedule, tree_budget, seed, "dim(0,0)", 0, 0, keep_families)
        return est
    if l == 0 and m == system.k:
        return _full_dimensional_points(system, delta_schedule, n_schedule, target_count, seed, samples, lattice, tree_budget, seed_families, keep_families, resolution)
    rows = []
    fams = {}
    diag = {"targets": target_count, "rejected": 0, "seed": seed}
    for d in delta_schedule:
        Deltas = sample_admissible_targets(system, m, d, target_count, seed, resolution=max(resolution, 5))
        for n in n_schedule:
            best = None
            pools = []
            if seed_families and (d, n) in seed_families:
                sf = seed_families[(d, n)]
                pools.append((_as_graphs(system, sf), sf.target))
            for ti, Dl in enumerate(Deltas):
                try:
                    graphs = enumerate_preimage_graphs(system, Dl, l, n, d, budget, seed + ti, resolution)
                except (BudgetExceeded, TreeBudgetExceeded):
                    diag["rejected"] += 1
                    continue
                pools.append((graphs, Dl))
            for pool, target in pools:
                fam = greedy_graphs(system, pool, n, d, seed)
                fam.target = target
                if best is None or fam.count > best.count:
                    best = fam
            count = best.count if best is not None else 0
            rows.append((float(d), int(n), count))
            if keep_families and best is not None:
                fams[(d, n)] = best
    est = EntropyEstimate(f"dim({m},{l})", m, l, rows, diagnostics=diag, families=fams)
    return est.finalize()


def _full_dimensional_points(system, delta_schedule, n_schedule, target_count, seed, samples, lattice, tree_budget, seed_families, keep_families, resolution, max_pool=2**17, saturation=0.25):
    """``h_(k,0)``: points in ``f^{-n}`` of full-dimensional balls.

    Candidates are the preimage leaves of a lattice inside the target ball.
    Targets are the most occupied cube of the forward images of the
    topological-entropy pool (same seed) and seeded random balls.
    """
    cands = htop_candidates(system, samples, seed, lattice)
    n_max = max(n_schedule)
    emb_full, ok = iterate(system, cands, n_max + 1)
    emb_full = emb_full[ok]
    rows, fams = [], {}
    diag = {"candidates": int(cands.shape[0]), "seed": seed, "occupancy": {}}
    for d in delta_schedule:
        randoms = sample_admissible_targets(system, system.k, d, target_count, seed, resolution)
        for n in n_schedule:
            fwd = emb_full[:, n]
            cube, occ = cube_select_target(system.wrap(fwd) if system.period else fwd, 2 * d, system, resolution)
            diag["occupancy"][f"{d:.12g}/{n}"] = occ
            best = None
            pools = []
            for B in [cube] + randoms:
                fam = _ball_family(system, B, n, d, seed, tree_budget, max_pool, saturation)
                if fam is not None:
                    pools.append(fam)
            if seed_families and (d, n) in seed_families:
                sf = seed_families[(d, n)]
                fam = greedy_points(system, _as_embeddings(sf), d, seed)
                fam.target = sf.target
                pools.append(fam)
            for fam in pools:
                if best is None or fam.count > best.count:
                    best = fam
            rows.append((float(d), int(n), best.count if best is not None else 0))
            if keep_families and best is not None:
                fams[(d, n)] = best
    est = EntropyEstimate(f"dim({system.k},0)", system.k, 0, rows, diagnostics=diag, families=fams)
    return est.finalize()


def _ball_family(system, B, n, d, seed, tree_budget, max_pool, saturation):
    """Greedy family among depth-``n`` preimages of a lattice in the ball ``B``.

    An invertible map has one preimage per lattice point, so the lattice is
    refined (``g -> 2g - 1`` per axis) while the count exceeds ``saturation``
    times the pool, up to ``max_pool`` lattice nodes.
    """
    nd = len(B.axes)
    fam = None
    while True:
        try:
            leaves, _ = _leaves_of(system, B.points(), n, tree_budget)
        except (BudgetExceeded, TreeBudgetExceeded):
            return fam
        lemb, lok = iterate(system, leaves, n)
        emb = lemb[lok]
        fam = greedy_points(system, emb, d, seed)
        fam.target = B
        g = 2 * B.resolution - 1
        if not system.invertible or fam.count <= saturation * emb.shape[0] or g**nd > max_pool:
            return fam
        B = B.with_(values=np.zeros((g,) * nd + (0,), dtype=B.dtype), valid=None)


def _as_graphs(system: MapSystem, fam: SeparatedFamily) -> list:
    if fam.embeddings is None:
        return list(fam.items)
    return [
        PreimageGraph(point_patch(system, e[0]), e[:, None, :], 0)
        for e in fam.embeddings
    ]


def _as_embeddings(fam: SeparatedFamily) -> np.ndarray:
    if fam.embeddings is not None:
        return fam.embeddings
    for g in fam.items:
        if g.orbit.shape[1] != 1:
            raise ValueError("seed family for point counts must hold points")
    return np.stack([g.orbit[:, 0] for g in fam.items])

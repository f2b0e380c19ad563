"""Scikit-learn style wrappers around the entropy and Lyapunov estimators.

The estimators are unsupervised: ``fit`` ignores ``y`` and, for entropy,
ignores ``X`` too (the system is sampled internally from ``seed``).
``transform`` returns the fitted table as an array and ``predict`` evaluates
the fitted growth line at new horizons.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cocycle import lyapunov_qr, sample_orbit
from .entropy import (
    estimate_dimensional_entropy,
    estimate_htop,
    estimate_metric_entropy,
    estimate_pointwise_preimage_entropy,
    long_orbit,
)
from .exceptions import ValidationError
from .validation import check_dims, check_points, check_positive, check_schedule, check_seed, check_system

QUANTITIES = ("top", "metric", "preimage", "dim")


class EntropyEstimator(BaseEstimator):
    """Separated-set growth rate of one entropy-like quantity.

    Parameters
    ----------
    system : str or MapSystem
        Registry string such as ``"doubling"`` or ``"henon:-1.4,0.3"``.
    quantity : {"top", "metric", "preimage", "dim"}
    deltas, ns : sequences
        Scales (strictly decreasing) and horizons (strictly increasing).
        For ``"metric"`` only the first delta is used.
    m, l : int
        Dimensions for ``quantity="dim"``.
    budget : int
        Leaf budget of graph enumeration per target.

    Attributes
    ----------
    estimate_ : EntropyEstimate
    rate_ : float
        Extrapolated growth rate.
    spread_ : float
        Range of the per-delta slopes.
    """

    def __init__(
        self,
        system="doubling",
        quantity="top",
        deltas=(0.2, 0.1, 0.05),
        ns=(2, 4, 6, 8),
        m=0,
        l=0,
        seed=0,
        samples=1000,
        lattice=4096,
        target_count=4,
        budget=2000,
        orbit_length=200_000,
        base_points=200,
    ):
        self.system = system
        self.quantity = quantity
        self.deltas = deltas
        self.ns = ns
        self.m = m
        self.l = l
        self.seed = seed
        self.samples = samples
        self.lattice = lattice
        self.target_count = target_count
        self.budget = budget
        self.orbit_length = orbit_length
        self.base_points = base_points

    def _validate(self):
        if self.quantity not in QUANTITIES:
            raise ValidationError([f"quantity: {self.quantity!r} not in {QUANTITIES}"])
        system = check_system(self.system)
        deltas, ns = check_schedule(self.deltas, self.ns)
        seed = check_seed(self.seed)
        return system, deltas, ns, seed

    def fit(self, X=None, y=None):
        system, deltas, ns, seed = self._validate()
        q = self.quantity
        if q == "top":
            est = estimate_htop(system, deltas, ns, samples=int(self.samples), seed=seed, lattice=self.lattice)
        elif q == "metric":
            length = int(check_positive("orbit_length", self.orbit_length, integer=True))
            orbit = long_orbit(system, length, seed)
            est = estimate_metric_entropy(system, orbit, deltas[0], ns, base_points=int(self.base_points), seed=seed)
        elif q == "preimage":
            est = estimate_pointwise_preimage_entropy(system, deltas, ns, target_samples=int(self.target_count), seed=seed)
        else:
            m, l = check_dims(system, self.m, self.l)
            est = estimate_dimensional_entropy(
                system, m, l, deltas, ns, target_count=int(self.target_count), budget=int(self.budget),
                seed=seed, samples=int(self.samples), lattice=self.lattice,
            )
        self.estimate_ = est
        self.rate_ = float(est.extrapolated)
        self.spread_ = float(est.spread)
        self._fit_line(est)
        return self

    def _fit_line(self, est):
        pts = est.fit_points(min(est.deltas)) if est.rows else []
        if len(pts) >= 2:
            self.coef_, self.intercept_ = np.polyfit([p[0] for p in pts], [math.log(p[1]) for p in pts], 1)
        elif pts:
            self.coef_, self.intercept_ = math.log(pts[0][1]) / pts[0][0], 0.0
        else:
            self.coef_, self.intercept_ = math.nan, math.nan

    def transform(self, X=None):
        """Rows ``(delta, n, count, rate)`` of the fitted table."""
        check_is_fitted(self, "estimate_")
        est = self.estimate_
        return np.array([[d, n, c, r] for (d, n, c), r in zip(est.rows, est.rates)], dtype=float)

    def fit_transform(self, X=None, y=None):
        return self.fit(X, y).transform(X)

    def predict(self, X):
        """Predicted ``log count`` at horizons ``X`` on the smallest scale."""
        check_is_fitted(self, "estimate_")
        n = np.asarray(X, dtype=float).ravel()
        return self.intercept_ + self.coef_ * n

    def score(self, X=None, y=None):
        """Negative delta spread; larger means a more stable estimate."""
        check_is_fitted(self, "estimate_")
        return -self.spread_


class LyapunovEstimator(BaseEstimator):
    """QR Lyapunov spectrum along orbits of ``system``.

    ``fit(X)`` uses the first row of ``X`` as the initial point, or a seeded
    sample when ``X`` is None.  ``transform(X)`` returns one spectrum per row.
    """

    def __init__(self, system="henon", n_steps=100_000, seed=0, warmup=None, direction="auto"):
        self.system = system
        self.n_steps = n_steps
        self.seed = seed
        self.warmup = warmup
        self.direction = direction

    def _direction(self, system):
        if self.direction != "auto":
            if self.direction not in ("forward", "backward"):
                raise ValidationError([f"direction: {self.direction!r}"])
            return self.direction
        return "backward" if system.degree > 1 and system.inverse is not None else "forward"

    def _spectrum(self, system, x0):
        n = int(check_positive("n_steps", self.n_steps, integer=True))
        orbit = sample_orbit(system, x0, n, self._direction(system), seed=check_seed(self.seed))
        return lyapunov_qr(orbit, warmup=self.warmup)

    def fit(self, X=None, y=None):
        system = check_system(self.system)
        if X is None:
            rng = np.random.default_rng(check_seed(self.seed))
            x0 = system.sample(rng, 1)[0]
        else:
            x0 = check_points(system, X)[0]
        spec = self._spectrum(system, x0)
        self.spectrum_ = spec
        self.exponents_ = np.asarray(spec.exponents)
        self.stderr_ = np.asarray(spec.stderr)
        return self

    def transform(self, X):
        system = check_system(self.system)
        X = check_points(system, X)
        return np.vstack([self._spectrum(system, x).exponents for x in X])

    def fit_transform(self, X, y=None):
        self.fit(X[:1] if X is not None else None)
        return self.transform(X)

"""Batched simultaneous root iteration (Aberth-Ehrlich) for univariate polynomials."""

import numpy as np

from .exceptions import RootFindingFailure


def _horner(coeffs, z):
    p = np.zeros_like(z)
    dp = np.zeros_like(z)
    for c in coeffs:
        dp = dp * z + p
        p = p * z + c
    return p, dp


def initial_guesses(coeffs, targets):
    """Points on a circle enclosing every root of ``coeffs - target``."""
    coeffs = np.asarray(coeffs, dtype=complex)
    targets = np.atleast_1d(np.asarray(targets, dtype=complex))
    d = len(coeffs) - 1
    lead = coeffs[0]
    rest = np.broadcast_to(coeffs[1:], (len(targets), d)).copy()
    rest[:, -1] -= targets
    # Fujiwara bound on root moduli
    k = np.arange(1, d + 1)
    radius = 2.0 * np.max(np.abs(rest / lead) ** (1.0 / k), axis=1)
    radius = np.maximum(radius, 1e-3)
    angles = 0.4 + 2.0 * np.pi * np.arange(d) / d
    return radius[:, None] * np.exp(1j * angles)[None, :]


def polynomial_preimages(coeffs, targets, initial=None, tol=1e-9, max_iter=200):
    """All roots of ``p(z) = t`` for each target ``t``.

    Parameters
    ----------
    coeffs : array_like
        Polynomial coefficients, highest degree first.
    targets : array_like
        Right-hand sides, shape ``(N,)``.
    initial : array_like, optional
        Warm-start guesses of shape ``(N, d)``; perturbed roots of a nearby
        target converge in a handful of sweeps.

    Returns
    -------
    roots : ndarray of shape ``(N, d)``
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    targets = np.atleast_1d(np.asarray(targets, dtype=complex))
    d = len(coeffs) - 1
    if d < 1:
        raise ValueError("polynomial must have degree >= 1")
    shifted = lambda z: _horner(coeffs, z)[0] - targets[:, None]

    if initial is None:
        z = initial_guesses(coeffs, targets)
    else:
        z = np.array(initial, dtype=complex).reshape(len(targets), d)
        # break exact coincidences so the Aberth correction is defined
        z = z + 1e-7 * np.exp(1j * (0.3 + np.arange(d)))[None, :]

    if d == 1:
        return ((targets - coeffs[1]) / coeffs[0])[:, None]

    active = np.ones(len(targets), dtype=bool)
    eye = np.eye(d, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        za = z[active]
        p, dp = _horner(coeffs, za)
        p = p - targets[active][:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = p / dp
            diff = za[:, :, None] - za[:, None, :]
            diff[:, eye] = 1.0
            inv = 1.0 / diff
            inv[:, eye] = 0.0
            corr = newton / (1.0 - newton * inv.sum(axis=2))
        corr = np.where(np.isfinite(corr), corr, 0.0)
        za = za - corr
        z[active] = za
        step = np.max(np.abs(corr), axis=1)
        scale = np.maximum(1.0, np.max(np.abs(za), axis=1))
        done = step <= 1e-14 * scale
        idx = np.flatnonzero(active)
        active[idx[done]] = False

    # Newton polish
    for _ in range(3):
        p, dp = _horner(coeffs, z)
        p = p - targets[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = p / dp
        z = z - np.where(np.isfinite(corr), corr, 0.0)

    residual = np.abs(shifted(z))
    if np.any(residual > tol):
        raise RootFindingFailure(
            f"max residual {residual.max():.3e} exceeds {tol:.1e} after {max_iter} sweeps"
        )
    return z

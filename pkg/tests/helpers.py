"""Random hypothesis-satisfying graph-transform setups with analytic bounds."""

import numpy as np

from dimentropy.cocycle import op_norm
from dimentropy.graphs import GraphTransformSetup, make_patch, transform_domain_bound


def _cvec(rng, size):
    return rng.normal(size=size) + 1j * rng.normal(size=size)


def random_setup(rng, resolution=5):
    """Draw until the guaranteed output radius is positive; see :func:`_draw`."""
    while True:
        setup, patch, lip_phi = _draw(rng, resolution)
        if transform_domain_bound(setup, setup.alpha, setup.beta) > 0:
            return setup, patch, lip_phi


def _draw(rng, resolution):
    """``(setup, phi, lip_phi)`` with ``gamma`` bounding ``|DR|, |DU|`` on the graph of ``phi``.

    ``g = (A X + R, B Y + U)`` where every row of ``R``/``U`` is a scaled
    square of a linear form, so the derivative bound is explicit.
    """
    k1 = int(rng.integers(1, 3))
    k2 = int(rng.integers(1, 3)) if k1 == 1 else 1
    k = k1 + k2
    A = _cvec(rng, (k1, k1))
    A *= rng.uniform(1.5, 4.0) * op_norm(np.linalg.inv(A))
    B = _cvec(rng, (k2, k2))
    B *= rng.uniform(0.0, 0.6) / op_norm(B)
    alpha = rng.uniform(0.3, 1.0)
    gamma0 = rng.uniform(0.1, 0.9)
    # phi(X) = b + G X + eta (d.X)^2 e, with Lip <= gamma0 on the alpha ball
    G = _cvec(rng, (k2, k1))
    G *= rng.uniform(0.0, 0.6) * gamma0 / op_norm(G)
    d = _cvec(rng, k1)
    e = _cvec(rng, k2)
    e /= np.max(np.abs(e))
    quad_room = gamma0 - op_norm(G)
    eta = rng.uniform(0, 0.9) * quad_room / (2 * np.sum(np.abs(d)) ** 2 * alpha)
    lip_phi = float(op_norm(G) + 2 * eta * np.sum(np.abs(d)) ** 2 * alpha)
    beta = rng.uniform(0.0, 0.2)
    b = beta * np.exp(2j * np.pi * rng.random(k2))

    def phi(X):
        X = np.atleast_2d(X)
        return b + X @ G.T + eta * ((X @ d) ** 2)[:, None] * e

    C = _cvec(rng, (k, k))
    C /= np.sum(np.abs(C), axis=1, keepdims=True)  # unit l1 rows
    Ainv_norm = float(op_norm(np.linalg.inv(A)))
    wmax = max(alpha, beta + lip_phi * alpha)
    # keep gamma inside the hypothesis with margin
    cap = 0.8 / (Ainv_norm * (1 + lip_phi))
    gamma = rng.uniform(0.0, 1.0) * cap
    eps = rng.uniform(-1, 1, k) * gamma / (2 * wmax)

    def g(W):
        W = np.atleast_2d(W)
        N = eps * ((W @ C.T) ** 2)
        return np.concatenate([W[:, :k1] @ A.T + N[:, :k1], W[:, k1:] @ B.T + N[:, k1:]], axis=1)

    gamma_bound = float(np.max(2 * np.abs(eps))) * wmax
    setup = GraphTransformSetup(k1=k1, k2=k2, A=A, B=B, g=g, gamma=gamma_bound, gamma0=lip_phi,
                                R0=wmax, R1=wmax, alpha=alpha, beta=beta, mode="complex")
    patch = make_patch(phi, k1, alpha, k=k, mode="complex", resolution=resolution, lip_bound=lip_phi)
    return setup, patch, lip_phi

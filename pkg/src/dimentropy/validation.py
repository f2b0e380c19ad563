"""Input checks shared by the estimators, the config layer and the CLI."""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from .exceptions import ValidationError
from .systems import REGISTRY_NAMES, MapSystem, get_system


def schedule_violations(deltas, ns) -> list:
    """Every failed invariant of a (delta, n) schedule, as messages."""
    out = []
    deltas = list(deltas) if deltas is not None else []
    ns = list(ns) if ns is not None else []
    if not deltas:
        out.append("delta: schedule is empty")
    elif any(not np.isfinite(d) or d <= 0 for d in deltas):
        out.append("delta: values must be positive")
    elif any(b >= a for a, b in zip(deltas, deltas[1:])):
        out.append("delta: schedule must be strictly decreasing")
    if not ns:
        out.append("n: schedule is empty")
    elif any(int(n) != n or n < 1 for n in ns):
        out.append("n: values must be positive integers")
    elif any(b <= a for a, b in zip(ns, ns[1:])):
        out.append("n: schedule must be strictly increasing")
    return out


def check_schedule(deltas, ns) -> tuple:
    bad = schedule_violations(deltas, ns)
    if bad:
        raise ValidationError(bad)
    return [float(d) for d in deltas], [int(n) for n in ns]


def check_seed(seed, required: bool = True) -> Optional[int]:
    if seed is None:
        if required:
            raise ValidationError(["seed: required for randomized quantities"])
        return None
    try:
        value = int(seed)
    except (TypeError, ValueError):
        raise ValidationError([f"seed: {seed!r} is not an integer"]) from None
    if not 0 <= value < 2**64:
        raise ValidationError(["seed: must fit in 64 unsigned bits"])
    return value


def check_system(system) -> MapSystem:
    """Accept a :class:`MapSystem` or a registry string."""
    if isinstance(system, MapSystem):
        return system
    try:
        return get_system(str(system))
    except KeyError as exc:
        msg = str(exc.args[0])
        if "registry names" not in msg:
            msg += f"; registry names: {', '.join(REGISTRY_NAMES)}"
        raise ValidationError([f"system: {msg}"]) from None


def check_dims(system: MapSystem, m: int, l: int) -> tuple:
    if not 0 <= l <= m <= system.k:
        raise ValidationError([f"m, l: need 0 <= l <= m <= {system.k}, got m={m}, l={l}"])
    return int(m), int(l)


def check_points(system: MapSystem, X) -> np.ndarray:
    """Rows of affine coordinates for ``system``; rejects NaN and wrong widths."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X.reshape(-1, system.k) if system.k > 1 else X[:, None]
    if X.ndim != 2 or X.shape[1] != system.k:
        raise ValidationError([f"points: expected shape (N, {system.k}), got {X.shape}"])
    if X.shape[0] == 0:
        raise ValidationError(["points: empty input"])
    if not np.all(np.isfinite(X)):
        raise ValidationError(["points: contain NaN or infinity"])
    if system.mode == "real" and np.iscomplexobj(X) and np.any(X.imag != 0):
        raise ValidationError(["points: complex values for a real system"])
    return X.astype(system.dtype)


def check_positive(name: str, value, integer: bool = False) -> float:
    try:
        v = int(value) if integer else float(value)
    except (TypeError, ValueError):
        raise ValidationError([f"{name}: {value!r} is not a number"]) from None
    if not v > 0:
        raise ValidationError([f"{name}: must be positive"])
    return v


def collect(*checks: Iterable) -> None:
    """Raise one ValidationError listing the messages of every failed check."""
    msgs = [m for group in checks for m in group]
    if msgs:
        raise ValidationError(msgs)

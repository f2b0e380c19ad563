"""Vector plots of rate tables plus a gnuplot-readable data sidecar."""

from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import TooFewPoints


def _curves(estimate) -> dict:
    curves = {}
    for (d, n, c), r in zip(estimate.rows, estimate.rates):
        if math.isfinite(r):
            curves.setdefault(d, []).append((n, r))
    return {d: sorted(v) for d, v in sorted(curves.items(), reverse=True)}


def plot_data(estimate) -> str:
    """One gnuplot block per delta (blank-line separated): ``n rate count``."""
    lines = [f"# {estimate.quantity} m={estimate.m} l={estimate.l}", f"# extrapolated {estimate.extrapolated:.12g}"]
    for d in estimate.deltas:
        lines.append("")
        lines.append(f"# delta {d:.12g}")
        lines.append("# n rate count")
        for (dd, n, c), r in zip(estimate.rows, estimate.rates):
            if dd == d:
                lines.append(f"{n} {r:.12g} {c}")
    return "\n".join(lines) + "\n"


def _atomic(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_plot(estimate, path) -> list:
    """Write ``path`` (SVG) and ``path`` with suffix ``.dat``; returns both paths.

    Raises :class:`TooFewPoints` unless the table has at least two ``n`` values.
    """
    if len(estimate.ns) < 2:
        raise TooFewPoints(f"need rates at >= 2 values of n, got {len(estimate.ns)}")
    import io

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for d, pts in _curves(estimate).items():
        ns, rs = np.array(pts).T
        ax.plot(ns, rs, marker="o", label=f"delta = {d:g}")
    if math.isfinite(estimate.extrapolated):
        ax.axhline(estimate.extrapolated, color="k", ls="--", lw=1, label=f"extrapolated {estimate.extrapolated:.4f}")
    ax.set_xlabel("n")
    ax.set_ylabel("log(count) / n")
    title = estimate.quantity if estimate.m is None else f"{estimate.quantity} (m={estimate.m}, l={estimate.l})"
    ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    buf = io.BytesIO()
    with matplotlib.rc_context({"svg.hashsalt": "dimentropy", "svg.fonttype": "path"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    _atomic(path, buf.getvalue())
    dat = path.with_suffix(".dat")
    _atomic(dat, plot_data(estimate).encode())
    return [path, dat]

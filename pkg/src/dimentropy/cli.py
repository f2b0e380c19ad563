"""Command-line entry point.

Subcommands::

    dimentropy lyapunov
    dimentropy entropy top|metric|preimage|dim
    dimentropy graph demo
    dimentropy verify props|thm1|thm2|thm3|all

Every option may come from ``--config FILE``; flags given on the command
line win.  Outputs land in ``--out`` (default ``$DIMENTROPY_OUT`` or the
working directory), which must already exist.  Exit status: 0 success,
1 a verification scenario failed, 2 error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .config import COMMANDS, RunConfig, from_raw, read_raw
from .exceptions import DimentropyError, ParseError, ValidationError

log = logging.getLogger("dimentropy")

OUT_ENV = "DIMENTROPY_OUT"
EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def atomic_write(path: Path, text: str) -> Path:
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _g(x) -> str:
    return "%.12g" % x


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", text).strip("_")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _stem(cfg: RunConfig) -> str:
    parts = [cfg.command, cfg.quantity]
    if cfg.command == "graph":
        return "_".join(parts)
    if cfg.command == "entropy" and cfg.quantity == "dim":
        parts.append(f"m{cfg.m}l{cfg.l}")
    parts.append(_slug(cfg.system_spec))
    return "_".join(parts)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _schedule(cfg: RunConfig, system):
    from .verify import default_params

    p = default_params(system)
    deltas = list(cfg.deltas) if cfg.deltas is not None else p["deltas"]
    ns = list(cfg.ns) if cfg.ns is not None else p["ns"]
    return deltas, ns


def run_entropy(cfg: RunConfig, out: Path) -> tuple:
    from .entropy import (
        estimate_dimensional_entropy,
        estimate_htop,
        estimate_metric_entropy,
        estimate_pointwise_preimage_entropy,
        long_orbit,
    )

    system = cfg.build_system()
    deltas, ns = _schedule(cfg, system)
    q = cfg.quantity
    samples = cfg.samples or 1000
    targets = cfg.targets or 4
    if q == "top":
        est = estimate_htop(system, deltas, ns, samples=samples, seed=cfg.seed)
    elif q == "metric":
        if cfg.ns is None:
            ns = [1, 2, 3, 4, 5, 6]
        orbit = long_orbit(system, cfg.steps or 200_000, cfg.seed)
        est = estimate_metric_entropy(system, orbit, deltas[0], ns, base_points=samples if cfg.samples else 200, seed=cfg.seed)
    elif q == "preimage":
        est = estimate_pointwise_preimage_entropy(system, deltas, ns, target_samples=targets, seed=cfg.seed)
    else:
        est = estimate_dimensional_entropy(
            system, cfg.m, cfg.l, deltas, ns, target_count=targets, budget=cfg.budget or 2000,
            seed=cfg.seed, samples=samples,
        )
    stem = _stem(cfg)
    if cfg.format == "csv":
        path = atomic_write(out / f"{stem}.csv", est.to_csv())
    else:
        path = atomic_write(out / f"{stem}.json", est.to_json() + "\n")
    written = [path]
    if cfg.plot:
        from .plot import emit_plot

        written += emit_plot(est, out / f"{stem}.svg")
    print(f"{est.quantity} on {system.name}: extrapolated rate {_g(est.extrapolated)} (delta spread {_g(est.spread)})")
    return EXIT_OK, written


def run_lyapunov(cfg: RunConfig, out: Path) -> tuple:
    from .estimators import LyapunovEstimator

    system = cfg.build_system()
    est = LyapunovEstimator(system=system, n_steps=cfg.steps or 100_000, seed=cfg.seed).fit()
    spec = est.spectrum_
    stem = _stem(cfg)
    if cfg.format == "csv":
        rows = [[i + 1, _g(x), _g(e)] for i, (x, e) in enumerate(zip(spec.exponents, spec.stderr))]
        path = atomic_write(out / f"{stem}.csv", _csv(["index", "exponent", "stderr"], rows))
    else:
        doc = {
            "system": system.name,
            "steps": spec.n_used,
            "exponents": [float(_g(x)) for x in spec.exponents],
            "stderr": [float(_g(x)) for x in spec.stderr],
            "multiplicities": list(spec.multiplicities),
            "s": spec.s,
            "l0": spec.l0,
            "l1": spec.l1,
            "log_det_mean": float(_g(spec.log_det_mean)),
        }
        path = atomic_write(out / f"{stem}.json", json.dumps(doc, indent=2) + "\n")
    print(f"lyapunov on {system.name}: " + ", ".join(_g(x) for x in spec.exponents))
    return EXIT_OK, [path]


def run_graph_demo(cfg: RunConfig, out: Path) -> tuple:
    """Graph transform of a tilted line under ``(2X, 0.5Y + 0.1X^2)``."""
    from .graphs import dump_patch, make_patch, make_setup, transform_domain_bound, graph_transform

    def g(W):
        W = np.atleast_2d(W)
        return np.stack([2 * W[:, 0], 0.5 * W[:, 1] + 0.1 * W[:, 0] ** 2], axis=1)

    setup = make_setup(g, 1, 2, mode="complex", R0=1.0, gamma0=0.3, alpha=1.0, seed=cfg.seed or 0)
    phi = make_patch(lambda X: 0.3 * X, 1, 1.0, k=2, mode="complex", lip_bound=0.3)
    img = graph_transform(setup, phi)
    measured = img.sampled_lipschitz(seed=cfg.seed or 0)
    bound = setup.lipschitz_bound(0.3)
    radius_bound = transform_domain_bound(setup, 1.0, 0.0)
    summary = [
        ["gamma", _g(setup.gamma)],
        ["lipschitz_measured", _g(measured)],
        ["lipschitz_bound", _g(bound)],
        ["domain_radius", _g(img.radius)],
        ["domain_radius_bound", _g(radius_bound)],
    ]
    stem = _stem(cfg)
    written = [atomic_write(out / f"{stem}_patch.txt", dump_patch(img))]
    if cfg.format == "csv":
        written.append(atomic_write(out / f"{stem}.csv", _csv(["quantity", "value"], summary)))
    else:
        written.append(atomic_write(out / f"{stem}.json", json.dumps({k: float(v) for k, v in summary}, indent=2) + "\n"))
    print(f"graph demo: lip {_g(measured)} <= {_g(bound)}, radius {_g(img.radius)} >= {_g(radius_bound)}")
    return EXIT_OK, written


def _verify_params(cfg: RunConfig) -> dict:
    p = {"seed": cfg.seed}
    if cfg.deltas is not None:
        p["deltas"] = list(cfg.deltas)
    if cfg.ns is not None:
        p["ns"] = list(cfg.ns)
    for src, dst in (("samples", "samples"), ("budget", "budget"), ("targets", "target_count"), ("steps", "orbit_length")):
        if getattr(cfg, src) is not None:
            p[dst] = getattr(cfg, src)
    return p


def _skipped(scenario, system, params, exc):
    from .verify import ExperimentReport

    rep = ExperimentReport(scenario, system.name, dict(params), "checks", float("nan"), float("nan"), 0.0,
                           notes=[f"skipped: {type(exc).__name__}: {exc}"])
    rep.passed = True
    return rep


def verify_reports(cfg: RunConfig) -> list:
    from .exceptions import DegenerateTransversal, NoGap
    from .verify import (
        _pipeline_report,
        check_monotonicity,
        check_prop_equality,
        check_theorem_inequality,
        proof_pipeline,
    )

    system = cfg.build_system()
    params = _verify_params(cfg)
    which = cfg.quantity
    reports = []
    if which in ("props", "all"):
        if system.inverse is None:
            pass
        elif system.degree == 1 and system.period is None:
            # backward images of a ball escape the bounded region, so the two counts measure different sets
            reports.append(_skipped("prop_k0_equals_top", system, params,
                                    ValueError("invertible map on a non-compact chart")))
        else:
            reports.append(check_prop_equality(system, params))
        kind_ml = [("extend", 0, 0)]
        if system.k >= 2:
            kind_ml.append(("slice", 1, 1))
        for kind, m, l in kind_ml:
            try:
                reports.append(check_monotonicity(system, m, l, params, kind))
            except (ValueError, DimentropyError) as exc:
                reports.append(_skipped(f"monotonicity_{kind}", system, params, exc))
    thms = ("thm1", "thm2", "thm3") if which == "all" else ((which,) if which.startswith("thm") else ())
    for thm in thms:
        try:
            reports.append(check_theorem_inequality(system, thm, params))
        except NoGap as exc:
            reports.append(_skipped(thm, system, params, exc))
        try:
            state, rep = proof_pipeline(system, thm, seed=cfg.seed)
            reports.append(rep)
        except (NoGap, DegenerateTransversal, NotImplementedError) as exc:
            reports.append(_skipped(f"pipeline_{thm}", system, params, exc))
    return reports


def run_verify(cfg: RunConfig, out: Path) -> tuple:
    reports = verify_reports(cfg)
    stem = _stem(cfg)
    for rep in reports:
        print(rep.summary())
    if cfg.format == "json":
        doc = {"command": "verify", "quantity": cfg.quantity, "system": cfg.system_spec, "seed": cfg.seed,
               "passed": all(r.passed for r in reports), "reports": [r.to_dict() for r in reports]}
        path = atomic_write(out / f"{stem}.json", json.dumps(doc, indent=2) + "\n")
    else:
        rows = [[r.scenario, r.system, r.relation, _g(r.left), _g(r.right), _g(r.slack), int(r.passed)] for r in reports]
        path = atomic_write(out / f"{stem}.csv", _csv(["scenario", "system", "relation", "left", "right", "slack", "passed"], rows))
    ok = all(r.passed for r in reports)
    return (EXIT_OK if ok else EXIT_FAIL), [path]


_RUNNERS = {"entropy": run_entropy, "lyapunov": run_lyapunov, "graph": run_graph_demo, "verify": run_verify}


def run(cfg: RunConfig) -> int:
    """Execute ``cfg``; returns the exit status."""
    out = Path(cfg.out)
    if not out.is_dir():
        print(f"error: output directory does not exist: {out}", file=sys.stderr)
        return EXIT_ERROR
    try:
        status, written = _RUNNERS[cfg.command](cfg, out)
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename or out}", file=sys.stderr)
        return EXIT_ERROR
    except DimentropyError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for p in written:
        print(f"wrote {p}")
    return status


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style run configuration; flags override it")
    common.add_argument("--system", help="registry spec, e.g. doubling, power:3, henon:-1.4,0.3")
    common.add_argument("--param", action="append", default=[], metavar="K=V", help="system parameter (repeatable)")
    common.add_argument("--delta", help="comma list of scales, strictly decreasing")
    common.add_argument("--n", help="comma list of horizons, strictly increasing")
    common.add_argument("--m", type=int)
    common.add_argument("--l", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--budget", type=int, help="graph enumeration budget")
    common.add_argument("--samples", type=int)
    common.add_argument("--targets", type=int)
    common.add_argument("--steps", type=int, help="orbit length")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--plot", action="store_true", default=None, help="also write an SVG plot and data sidecar")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dimentropy", description="Entropy and Lyapunov experiments for holomorphic maps.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("lyapunov", parents=[common], help="QR Lyapunov spectrum")
    helps = {"entropy": "separated-set growth rates", "graph": "graph transform demo", "verify": "property and inequality checks"}
    for name in ("entropy", "graph", "verify"):
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        sp.add_argument("quantity", choices=COMMANDS[name])
    return parser


def _overlay(raw: dict, args) -> dict:
    raw = dict(raw)
    raw["command"] = args.command
    if getattr(args, "quantity", None):
        raw["quantity"] = args.quantity
    elif args.command == "lyapunov":
        raw["quantity"] = "spectrum"
    if args.system is not None:
        raw["system"] = args.system
        raw["params"] = {}
        raw.pop("coefficients", None)
    if args.param:
        params = dict(raw.get("params") or {})
        for item in args.param:
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ValidationError([f"param: expected K=V, got {item!r}"])
            params[key.strip()] = value.strip()
        raw["params"] = params
    for flag, key in (("delta", "deltas"), ("n", "ns"), ("m", "m"), ("l", "l"), ("seed", "seed"), ("budget", "budget"),
                      ("samples", "samples"), ("targets", "targets"), ("steps", "steps"), ("format", "format"),
                      ("plot", "plot"), ("out", "out")):
        value = getattr(args, flag)
        if value is not None:
            raw[key] = value
    if raw.get("out") is None:
        raw["out"] = os.environ.get(OUT_ENV, ".")
    return raw


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        raw = {}
        if args.config:
            try:
                text = Path(args.config).read_text()
            except OSError as exc:
                print(f"error: cannot read config: {exc.filename}: {exc.strerror}", file=sys.stderr)
                return EXIT_ERROR
            raw = read_raw(text)
            if raw.get("command") not in (None, args.command):
                log.warning("config command %r overridden by %r", raw["command"], args.command)
        cfg = from_raw(_overlay(raw, args))
    except ParseError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValidationError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return EXIT_ERROR
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Run configuration: an INI-style text grammar, validation and round-trip.

Grammar (``#`` and ``;`` start comments, keys are ``key = value``)::

    [run]
    command = entropy        ; lyapunov | entropy | graph | verify
    quantity = top           ; entropy: top|metric|preimage|dim
                             ; verify: props|thm1|thm2|thm3|all ; graph: demo
    seed = 0

    [system]
    name = henon             ; registry name, or a full spec like henon:-1.4,0.3
    c = -1.4                 ; named parameters (henon c,b; power d;
    b = 0.3                  ; rotation alpha; linear a,b,c,d; diag values)
    ; coefficients = 0,0,1   ; polynomial coefficients instead of a name

    [schedule]
    delta = 0.2, 0.1, 0.05   ; strictly decreasing
    n = 2, 4, 6, 8           ; strictly increasing
    m = 1
    l = 1

    [budget]
    samples = 1000
    budget = 2000
    targets = 4
    steps = 100000

    [output]
    path = results
    format = csv             ; csv | json
    plot = false

Only ``[run] command`` and ``seed`` are required; a missing schedule or
budget falls back to per-system defaults at run time.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .exceptions import ParseError, ValidationError
from .systems import REGISTRY_NAMES, MapSystem, get_system, polynomial_system
from .validation import schedule_violations

COMMANDS = {
    "lyapunov": ("spectrum",),
    "entropy": ("top", "metric", "preimage", "dim"),
    "graph": ("demo",),
    "verify": ("props", "thm1", "thm2", "thm3", "all"),
}
FORMATS = ("csv", "json")

# named parameters, in the order the registry string expects them
_PARAM_ORDER = {
    "henon": ("c", "b"),
    "power": ("d",),
    "rotation": ("alpha",),
    "linear": ("a", "b", "c", "d"),
}

_SECTIONS = {
    "run": ("command", "quantity", "seed"),
    "schedule": ("delta", "n", "m", "l"),
    "budget": ("samples", "budget", "targets", "steps"),
    "output": ("path", "format", "plot"),
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    quantity: str
    seed: Optional[int]
    system: str = "doubling"
    params: tuple = ()
    coefficients: Optional[tuple] = None
    deltas: Optional[tuple] = None
    ns: Optional[tuple] = None
    m: int = 0
    l: int = 0
    samples: Optional[int] = None
    budget: Optional[int] = None
    targets: Optional[int] = None
    steps: Optional[int] = None
    out: str = "."
    format: str = "csv"
    plot: bool = False
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def system_spec(self) -> str:
        """Registry string for the system (named parameters folded in)."""
        if self.coefficients is not None:
            return "polynomial:" + ",".join(repr(c) for c in self.coefficients)
        if not self.params:
            return self.system
        p = dict(self.params)
        order = _PARAM_ORDER.get(self.system)
        if order is None:
            vals = [p[k] for k in sorted(p)]
        else:
            vals = [p[k] for k in order]
        return f"{self.system}:" + ",".join(vals)

    def build_system(self) -> MapSystem:
        if self.coefficients is not None:
            return polynomial_system([[complex(c) for c in self.coefficients]])
        return get_system(self.system_spec)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return validate(replace(self, **kw))


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _reader() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(
        interpolation=None, strict=True, inline_comment_prefixes=("#", ";"), empty_lines_in_values=False
    )
    cp.optionxform = str
    return cp


def _line_numbers(text: str) -> dict:
    """``(section, key) -> line`` for error messages."""
    where = {}
    section = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            where[(section, None)] = i
        elif "=" in s and section is not None:
            where[(section, s.split("=", 1)[0].strip())] = i
    return where


def read_raw(text: str) -> dict:
    """Parse the grammar into ``{field: string}`` without validating values."""
    cp = _reader()
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key outside any [section]", exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ParseError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ParseError("expected 'key = value'", line) from None
    where = _line_numbers(text)
    raw = {"params": {}}
    for section in cp.sections():
        if section == "system":
            for key, value in cp.items(section):
                if key == "name":
                    raw["system"] = value
                elif key == "coefficients":
                    raw["coefficients"] = value
                else:
                    raw["params"][key] = value
            continue
        allowed = _SECTIONS.get(section)
        if allowed is None:
            line = where.get((section, None))
            raise ParseError(f"unknown section [{section}]", line)
        for key, value in cp.items(section):
            if key not in allowed:
                line = where.get((section, key))
                raise ParseError(f"unknown key {key!r} in [{section}]", line)
            raw[{"delta": "deltas", "n": "ns", "path": "out"}.get(key, key)] = value
    return raw


def _list(text, conv):
    if isinstance(text, (list, tuple)):
        return tuple(conv(v) for v in text)
    return tuple(conv(v) for v in str(text).split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(text)


def _coef(v):
    if isinstance(v, (int, float, complex)):
        return v
    v = str(v).strip()
    return complex(v.replace(" ", "")) if "j" in v else float(v)


def _int_strict(v) -> int:
    if isinstance(v, int):
        return v
    f = float(v)
    if f != int(f):
        raise ValueError(v)
    return int(f)


def from_raw(raw: dict) -> RunConfig:
    """Convert a raw mapping into a validated :class:`RunConfig`.

    Every conversion and invariant failure is collected before raising.
    """
    bad = []
    kw = {}

    def conv(name, fn, target=None):
        if name not in raw or raw[name] is None:
            return
        try:
            kw[target or name] = fn(raw[name])
        except (TypeError, ValueError):
            bad.append(f"{target or name}: cannot parse {raw[name]!r}")

    for name in ("command", "quantity", "system", "out", "format"):
        if raw.get(name) is not None:
            kw[name] = str(raw[name]).strip()
    conv("seed", _int_strict)
    conv("deltas", lambda v: _list(v, float))
    conv("ns", lambda v: _list(v, _int_strict))
    conv("coefficients", lambda v: _list(v, _coef))
    for name in ("m", "l", "samples", "budget", "targets", "steps"):
        conv(name, _int_strict)
    conv("plot", _bool)
    params = raw.get("params") or {}
    kw["params"] = tuple(sorted((str(k), str(v).strip()) for k, v in dict(params).items()))
    if "command" not in kw:
        bad.append("command: missing ([run] command)")
    if "quantity" not in kw and kw.get("command") in COMMANDS:
        kw["quantity"] = COMMANDS[kw["command"]][0]
    kw.setdefault("quantity", "")
    kw.setdefault("seed", None)
    if bad:
        # report conversion problems together with the invariant checks
        kw.setdefault("command", "")
        cfg = RunConfig(**kw)
        raise ValidationError(bad + violations(cfg))
    kw.setdefault("command", "")
    return validate(RunConfig(**kw))


def violations(cfg: RunConfig) -> list:
    """Every failed invariant of ``cfg``."""
    out = []
    if cfg.command and cfg.command not in COMMANDS:
        out.append(f"command: {cfg.command!r} not one of {', '.join(COMMANDS)}")
    elif cfg.command and cfg.quantity not in COMMANDS[cfg.command]:
        out.append(f"quantity: {cfg.quantity!r} not one of {', '.join(COMMANDS[cfg.command])} for {cfg.command}")
    if cfg.seed is None and cfg.command != "graph":
        out.append("seed: required for randomized quantities")
    elif cfg.seed is not None and not 0 <= cfg.seed < 2**64:
        out.append("seed: must fit in 64 unsigned bits")
    if cfg.deltas is not None or cfg.ns is not None:
        out += [
            v for v in schedule_violations(cfg.deltas if cfg.deltas is not None else [1.0],
                                           cfg.ns if cfg.ns is not None else [1])
        ]
    system = None
    if cfg.coefficients is not None:
        if len(cfg.coefficients) < 3:
            out.append("coefficients: need a polynomial of degree >= 2")
        else:
            try:
                system = cfg.build_system()
            except (ValueError, KeyError) as exc:
                out.append(f"coefficients: {exc}")
    else:
        order = _PARAM_ORDER.get(cfg.system)
        if order is not None and cfg.params and set(dict(cfg.params)) != set(order):
            out.append(f"system: {cfg.system} takes parameters {', '.join(order)}")
        else:
            try:
                system = cfg.build_system()
            except KeyError as exc:
                msg = str(exc.args[0])
                if "registry names" not in msg:
                    msg += f"; registry names: {', '.join(REGISTRY_NAMES)}"
                out.append(f"system: {msg}")
    if cfg.command == "entropy" and cfg.quantity == "dim":
        kmax = system.k if system is not None else None
        if not 0 <= cfg.l <= cfg.m or (kmax is not None and cfg.m > kmax):
            out.append(f"m, l: need 0 <= l <= m <= {kmax if kmax is not None else 'k'}, got m={cfg.m}, l={cfg.l}")
    for name in ("samples", "budget", "targets", "steps"):
        if getattr(cfg, name) is not None and getattr(cfg, name) <= 0:
            out.append(f"{name}: must be positive")
    if cfg.format not in FORMATS:
        out.append(f"format: {cfg.format!r} not one of {', '.join(FORMATS)}")
    return out


def validate(cfg: RunConfig) -> RunConfig:
    bad = violations(cfg)
    if bad:
        raise ValidationError(bad)
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises :class:`ParseError` or :class:`ValidationError`."""
    return from_raw(read_raw(text))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _num(x) -> str:
    if isinstance(x, complex):
        return repr(x).strip("()")
    return repr(x)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(serialize_config(c)) == c``."""
    lines = ["[run]", f"command = {cfg.command}", f"quantity = {cfg.quantity}"]
    if cfg.seed is not None:
        lines.append(f"seed = {cfg.seed}")
    lines += ["", "[system]"]
    if cfg.coefficients is not None:
        lines.append("coefficients = " + ", ".join(_num(c) for c in cfg.coefficients))
    else:
        lines.append(f"name = {cfg.system}")
        lines += [f"{k} = {v}" for k, v in cfg.params]
    lines += ["", "[schedule]"]
    if cfg.deltas is not None:
        lines.append("delta = " + ", ".join(repr(float(d)) for d in cfg.deltas))
    if cfg.ns is not None:
        lines.append("n = " + ", ".join(str(n) for n in cfg.ns))
    lines += [f"m = {cfg.m}", f"l = {cfg.l}", "", "[budget]"]
    lines += [f"{f} = {getattr(cfg, f)}" for f in ("samples", "budget", "targets", "steps") if getattr(cfg, f) is not None]
    lines += ["", "[output]", f"path = {cfg.out}", f"format = {cfg.format}", f"plot = {str(cfg.plot).lower()}"]
    return "\n".join(lines) + "\n"


def config_fields() -> tuple:
    return tuple(f.name for f in fields(RunConfig) if f.name != "extra")

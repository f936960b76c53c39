"""Run configuration: ``key = value`` text in four sections.

Example (the crypto demo)::

    [problem]
    model = crypto
    nu = 0.1
    c = 1
    K = 1
    N = 2
    r1 = -0.2
    r0 = affine(1, -3)

    [mc]
    x0 = 0.25, 0.5, 0.75

Field-valued keys (``a``, ``b``, ``f``, ``r``, ``r0``) take a named family:
``const(c)``, ``affine(p, q)`` (p + q x), ``cos(amp, k, offset)``
(offset + amp cos(2 pi k x)), ``poly(c0, c1, ...)`` or
``csv(path[, column])``.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .errors import ConfigParseError
from .grid import Grid1D, ScalarField, read_field_csv

COMMANDS = ("solve", "eigen", "evolve", "branch", "verify-control", "scenario", "verify-all")
MODELS = ("generic", "crypto", "realestate", "branch")
SECTIONS = ("problem", "solver", "mc", "output")


# -- field families ------------------------------------------------------------------

@dataclass(frozen=True)
class FieldSpec:
    family: str
    args: tuple

    def __str__(self) -> str:
        return f"{self.family}({', '.join(_fmt(a) for a in self.args)})"

    def build(self, grid: Grid1D, base_dir: Optional[Path] = None) -> ScalarField:
        x = grid.nodes
        a = self.args
        if self.family == "const":
            return ScalarField(grid, float(a[0]))
        if self.family == "affine":
            return ScalarField(grid, a[0] + a[1] * x)
        if self.family == "cos":
            return ScalarField(grid, a[2] + a[0] * np.cos(2.0 * np.pi * a[1] * x))
        if self.family == "poly":
            return ScalarField(grid, np.polynomial.polynomial.polyval(x, a))
        # csv: sample the stored column onto the run grid
        path = Path(a[0])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        src = read_field_csv(path, a[1] if len(a) > 1 else "value")
        return ScalarField(grid, np.interp(x, src.x, src.values))


_ARITY = {"const": (1, 1), "affine": (2, 2), "cos": (3, 3), "poly": (1, 64), "csv": (1, 2)}
_CALL = re.compile(r"^\s*([a-z]+)\s*\((.*)\)\s*$")


def parse_field_spec(text: str) -> FieldSpec:
    m = _CALL.match(text)
    if not m:
        try:
            return FieldSpec("const", (float(text),))
        except ValueError:
            raise ValueError(f"expected a number or family(args), got '{text}'") from None
    name, body = m.group(1), m.group(2)
    if name not in _ARITY:
        raise ValueError(f"unknown field family '{name}' (known: {', '.join(_ARITY)})")
    parts = [p.strip() for p in body.split(",")] if body.strip() else []
    lo, hi = _ARITY[name]
    if not lo <= len(parts) <= hi:
        raise ValueError(f"{name} takes {lo}..{hi} arguments, got {len(parts)}")
    if name == "csv":
        return FieldSpec(name, tuple(parts))
    try:
        args = tuple(float(p) for p in parts)
    except ValueError:
        raise ValueError(f"malformed number in '{text}'") from None
    if not all(math.isfinite(v) for v in args):
        raise ValueError(f"non-finite argument in '{text}'")
    return FieldSpec(name, args)


# -- schema ----------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("value must be finite")
    return v


def _int(s: str) -> int:
    f = float(s)
    if not f.is_integer():
        raise ValueError(f"expected an integer, got '{s}'")
    return int(f)


def _floats(s: str) -> tuple:
    return tuple(_float(p) for p in s.split(",") if p.strip())


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got '{s}'")


def _positive(name):
    def check(v):
        if not v > 0:
            return f"{name} must be > 0"
    return check


def _at_least(name, lo):
    def check(v):
        if v < lo:
            return f"{name} must be >= {lo}"
    return check


def _unit_list(name):
    def check(v):
        if not v or any(not 0.0 <= t <= 1.0 for t in v):
            return f"{name} must be a nonempty list of points in [0, 1]"
    return check


def _positive_list(name):
    def check(v):
        if not v or any(not t > 0 for t in v):
            return f"{name} must be a nonempty list of positive numbers"
    return check


def _one_of(name, options):
    def check(v):
        if v not in options:
            return f"{name} must be one of {', '.join(options)}"
    return check


def _seed(v):
    if not 0 <= v < 2**64:
        return "seed must be an unsigned 64-bit integer"


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any = None
    check: Optional[Callable[[Any], Optional[str]]] = None


SCHEMA = {
    "problem": {
        "model": Key(str.strip, "generic", _one_of("model", MODELS)),
        "n": Key(_int, 1024, _at_least("n", 3)),
        "nu": Key(_float, None, _positive("nu")),
        "eps": Key(_float, None, _positive("eps")),
        "a": Key(parse_field_spec),
        "b": Key(parse_field_spec),
        "f": Key(parse_field_spec),
        "r": Key(parse_field_spec),
        "r0": Key(parse_field_spec),
        "r1": Key(_float),
        "c": Key(_float, None, _positive("c")),
        "K": Key(_float, None, _positive("K")),
        "N": Key(_float, None, _positive("N")),
        "gamma": Key(_float, None, _positive("gamma")),
        "Q": Key(_float, None, _positive("Q")),
        "eps_list": Key(_floats, (0.5, 1.0, 2.0), _positive_list("eps_list")),
        "lambda_points": Key(_int, 30, _at_least("lambda_points", 2)),
        "lambda_span": Key(_float, 1.0, _positive("lambda_span")),
        "shifts": Key(_floats),
    },
    "solver": {
        "tol": Key(_float, 1e-10, _positive("tol")),
        "dt": Key(_float, 1e-2, _positive("dt")),
        "t_max": Key(_float, 200.0, _positive("t_max")),
        "steady_tol": Key(_float, 1e-8, _positive("steady_tol")),
        "gap_tol": Key(_float, 1e-4, _positive("gap_tol")),
        "residual_tol": Key(_float, 1e-10, _positive("residual_tol")),
        "u0": Key(parse_field_spec, FieldSpec("const", (0.1,))),
    },
    "mc": {
        "paths": Key(_int, 100_000, _at_least("paths", 1)),
        "dt": Key(_float, 1e-3, _positive("dt")),
        "horizon": Key(_float, 50.0, _positive("horizon")),
        "seed": Key(_int, 42, _seed),
        "x0": Key(_floats, (0.25, 0.5, 0.75), _unit_list("x0")),
        "eps_p": Key(_float, 1e-3, _positive("eps_p")),
        "weight_floor": Key(_float, 1e-12, _at_least("weight_floor", 0.0)),
        "bias": Key(_float, 0.05, _at_least("bias", 0.0)),
        "growth": Key(_bool, True),
        "growth_dt": Key(_float, 1e-2, _positive("growth_dt")),
        "growth_horizon": Key(_float, 40.0, _positive("growth_horizon")),
    },
    "output": {
        "dir": Key(str.strip, "out"),
        "charts": Key(_bool, True),
    },
}

ALIASES = {("problem", "epsilon"): "eps"}

REQUIRED = {
    "generic": ("nu", "eps", "a"),
    "crypto": ("nu", "c", "K", "N", "r1", "r0"),
    "realestate": ("nu", "gamma", "K", "Q", "r1", "r0"),
    "branch": ("nu", "r"),
}


@dataclass
class RunConfig:
    command: str
    problem: dict
    solver: dict
    mc: dict
    output: dict
    base_dir: Optional[Path] = field(default=None, compare=False)

    @property
    def model(self) -> str:
        return self.problem["model"]

    @property
    def eps(self) -> float:
        """Quadratic coefficient; derived from the market data for scenarios."""
        p = self.problem
        if self.model == "crypto":
            return 2.0 * p["c"] * p["K"] * p["nu"] / p["N"]
        if self.model == "realestate":
            return p["gamma"] * p["K"] * (2.0 * p["nu"]) / p["Q"]
        return p["eps"]

    def section(self, name: str) -> dict:
        return getattr(self, name)


def _locate_keys(text: str) -> dict:
    """Map (section, key) to its 1-based line number."""
    where = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith(("#", ";")):
            continue
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip()
            continue
        if "=" in s:
            where.setdefault((section, s.split("=", 1)[0].strip()), lineno)
    return where


def parse_config(text: str, command: str = "verify-all",
                 base_dir: Optional[Path] = None) -> RunConfig:
    """Parse and validate a run configuration.

    Raises:
        ConfigParseError: naming the line and key at fault.
    """
    if command not in COMMANDS:
        raise ConfigParseError(f"unknown command '{command}'")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                   delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParseError("key outside of a section", line=exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigParseError("duplicate key", line=exc.lineno, key=exc.option) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigParseError(f"duplicate section [{exc.section}]", line=exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigParseError("malformed line (expected key = value)", line=lineno) from None

    where = _locate_keys(text)
    values = {name: {} for name in SECTIONS}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigParseError(f"unknown section [{sec}]", line=where.get((sec, None)))
        for raw_key, raw in cp.items(sec):
            key = ALIASES.get((sec, raw_key), raw_key)
            line = where.get((sec, raw_key))
            spec = SCHEMA[sec].get(key)
            if spec is None:
                raise ConfigParseError(f"unknown key in [{sec}]", line=line, key=raw_key)
            try:
                val = spec.parse(raw)
            except ValueError as exc:
                raise ConfigParseError(f"malformed value: {exc}", line=line, key=raw_key) from None
            if spec.check is not None:
                msg = spec.check(val)
                if msg:
                    raise ConfigParseError(msg, line=line, key=raw_key)
            values[sec][key] = val

    for sec, keys in SCHEMA.items():
        for key, spec in keys.items():
            values[sec].setdefault(key, spec.default)
    model = values["problem"]["model"]
    for key in REQUIRED[model]:
        if values["problem"][key] is None:
            raise ConfigParseError(f"missing required key for model '{model}'", key=key)
    return RunConfig(command, values["problem"], values["solver"], values["mc"],
                     values["output"], base_dir)


def load_config(path, command: str = "verify-all") -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParseError(f"cannot read config: {exc}") from None
    return parse_config(text, command, base_dir=p.parent)


def emit_config(cfg: RunConfig) -> str:
    """Canonical text for ``cfg``: every set key, schema order, defaults included."""
    out = []
    for sec in SECTIONS:
        out.append(f"[{sec}]")
        for key in SCHEMA[sec]:
            v = cfg.section(sec).get(key)
            if v is None:
                continue
            if isinstance(v, tuple) and not isinstance(v, FieldSpec):
                text = ", ".join(_fmt(t) for t in v)
            elif isinstance(v, bool):
                text = "true" if v else "false"
            else:
                text = _fmt(v)
            out.append(f"{key} = {text}")
        out.append("")
    return "\n".join(out)

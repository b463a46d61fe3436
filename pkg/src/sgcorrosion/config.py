"""Flat ``key = value`` run configuration files.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Parameter keys are the :class:`~sgcorrosion.params.ModelParams` field names.
``preset`` selects the base parameter set (default ``table1``) and any
parameter key overrides it. Unknown keys are rejected.
"""

from __future__ import annotations

import ast
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import mesh as meshmod
from .params import ModelParams, preset
from .timeloop import BOUND_POLICIES, RunConfig, SolverOptions

PARAM_KEYS = tuple(f.name for f in dataclasses.fields(ModelParams))

RUN_DEFAULTS = {
    "preset": "table1",
    "mesh": "uniform",
    "cells": 256,
    "mesh_file": None,
    "dt": 1e-6,
    "t_final": 1e-3,
    "mu": "auto",
    "fp_tol": 1e-12,
    "fp_max_iters": 500,
    "anderson_depth": 50,
    "residual_tol": 1e-9,
    "bound_policy": "warn",
    "initial_p": None,
    "initial_n": None,
    "output_times": None,
    "steady_threshold": 1e-6,
    # study settings
    "resolutions": (32, 64, 128, 256),
    "reference_cells": 1024,
    "reference_dt": 1e-6,
    "dt_list": (1e-4, 5e-5, 2.5e-5, 1.25e-5),
    "eps_list": (0.0, 1e-6, 1e-4, 1e-2),
    "error_norm": "projected",
}

_INT_KEYS = {"cells", "fp_max_iters", "anderson_depth", "reference_cells"}
_FLOAT_KEYS = {"dt", "t_final", "fp_tol", "residual_tol", "steady_threshold", "reference_dt"}
_LIST_INT = {"resolutions"}
_LIST_FLOAT = {"output_times", "dt_list", "eps_list"}
_STR_KEYS = {"preset", "mesh", "mesh_file", "bound_policy", "error_norm"}

ALL_KEYS = frozenset(PARAM_KEYS) | frozenset(RUN_DEFAULTS)


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# initial-data expressions

_FUNCS = {name: getattr(math, name) for name in
          ("exp", "log", "sqrt", "sin", "cos", "tan", "tanh", "sinh", "cosh", "atan", "erf")}
_FUNCS["abs"] = abs
_FUNCS["min"] = min
_FUNCS["max"] = max
_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
            ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
            ast.IfExp, ast.Compare, ast.Lt, ast.LtE, ast.Gt, ast.GtE)


@dataclass(frozen=True)
class Expression:
    """Initial profile ``u0(x)`` written as an arithmetic expression in ``x``.

    Only arithmetic, comparisons, conditional expressions and a few
    ``math`` functions are accepted. Instances are picklable.
    """

    text: str

    def __post_init__(self):
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"bad expression {self.text!r}: {exc.msg}") from None
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED):
                raise ConfigError(f"bad expression {self.text!r}: "
                                  f"{type(node).__name__} not allowed")
            if isinstance(node, ast.Name) and node.id not in _FUNCS | _CONSTS | {"x": 0}:
                raise ConfigError(f"bad expression {self.text!r}: unknown name {node.id!r}")
            if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name)
                                                  and node.func.id in _FUNCS):
                raise ConfigError(f"bad expression {self.text!r}: unknown function")

    def __call__(self, x):
        code = compile(self.text, "<initial>", "eval")
        return float(eval(code, {"__builtins__": {}}, {**_FUNCS, **_CONSTS, "x": float(x)}))

    def __repr__(self):
        return f"Expression({self.text!r})"


def parse_initial(value: str):
    """A constant if ``value`` is a number, else an :class:`Expression`."""
    try:
        return float(value)
    except ValueError:
        return Expression(value)


# ---------------------------------------------------------------------------
# parsing


@dataclass
class Config:
    """Parsed configuration: model parameters plus run and study settings."""

    params: ModelParams
    settings: dict = field(default_factory=dict)
    source: str | None = None

    def __getitem__(self, key):
        return self.settings[key]

    def mesh(self) -> meshmod.Mesh1D:
        s = self.settings
        return meshmod.build(s["mesh"], s["cells"], s["mesh_file"])

    def options(self) -> SolverOptions:
        s = self.settings
        mu = s["mu"]
        return SolverOptions(
            dt=s["dt"],
            mu=0.0 if mu == "auto" else mu,
            mu_policy="auto" if mu == "auto" else "fixed",
            fp_tol=s["fp_tol"], fp_max_iters=s["fp_max_iters"],
            bound_policy=s["bound_policy"], residual_tol=s["residual_tol"],
            anderson_depth=s["anderson_depth"])

    def run_config(self) -> RunConfig:
        s = self.settings
        return RunConfig(self.params, self.mesh(), self.options(), s["t_final"],
                         initial_p=s["initial_p"], initial_n=s["initial_n"],
                         output_times=s["output_times"], steady_threshold=s["steady_threshold"])


def _convert(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            v = int(raw)
        elif key in _FLOAT_KEYS:
            v = float(raw)
        elif key in _LIST_INT:
            v = tuple(int(t) for t in raw.replace(",", " ").split())
        elif key in _LIST_FLOAT:
            v = tuple(float(t) for t in raw.replace(",", " ").split())
        elif key == "mu":
            v = "auto" if raw == "auto" else float(raw)
        elif key in ("initial_p", "initial_n"):
            v = parse_initial(raw)
        elif key in _STR_KEYS:
            v = raw
        else:
            v = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    if key == "bound_policy" and v not in BOUND_POLICIES:
        raise ConfigError(f"bound_policy must be one of {BOUND_POLICIES}")
    return v


def parse_lines(lines, source: str | None = None) -> dict:
    """Raw ``key -> converted value`` mapping from config lines."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source or '<config>'}:{lineno}: expected 'key = value'")
        key, raw = (t.strip() for t in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigError(f"{source or '<config>'}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source or '<config>'}:{lineno}: duplicate key {key!r}")
        out[key] = _convert(key, raw)
    return out


def from_mapping(values: dict, source: str | None = None) -> Config:
    unknown = set(values) - ALL_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    settings = dict(RUN_DEFAULTS)
    settings.update({k: v for k, v in values.items() if k not in PARAM_KEYS})
    try:
        base = preset(settings["preset"])
        overrides = {k: v for k, v in values.items() if k in PARAM_KEYS}
        params = base.replace(**overrides) if overrides else base
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return Config(params, settings, source)


def load(path) -> Config:
    path = Path(path)
    return from_mapping(parse_lines(path.read_text().splitlines(), str(path)), str(path))


def default() -> Config:
    return from_mapping({})


def dump(cfg: Config) -> str:
    """Render a config back to text (every key explicit)."""
    lines = [f"preset = {cfg.settings['preset']}"]
    for k in PARAM_KEYS:
        lines.append(f"{k} = {getattr(cfg.params, k)!r}")
    for k, v in cfg.settings.items():
        if k == "preset" or v is None:
            continue
        if isinstance(v, tuple):
            v = " ".join(repr(t) for t in v)
        elif isinstance(v, Expression):
            v = v.text
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"

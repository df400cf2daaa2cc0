"""Experiment configuration files.

Flat INI text: ``[section]`` headers and ``key = value`` lines.  The
``[experiment]`` section selects the experiment ``kind`` and overrides its
defaults.  ``solve`` and ``reflect`` read a problem from ``[container]`` and
``[object.NAME]`` sections; ``[problem] objects = a, b`` fixes their order
(otherwise file order is used).

Datum expressions may use ``x``, ``y``, ``theta`` (polar angle about the
object's anchor), ``pi`` and the usual elementary functions.
"""

from __future__ import annotations

import ast
import configparser
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bvp import BoundaryCondition, ProblemSpec
from .geometry import GeometryLayout, make_circle, make_cshape

KINDS = ("solve", "reflect", "triangle_convergence", "divergence_case", "distance_sweep", "projection_demo")

DEFAULTS = {
    "solve": {"seed": 0, "probes": 200},
    "reflect": {"form": "seq", "cycles": 100, "tol": 1e-10, "seed": 0, "metric": "probe"},
    "triangle_convergence": {
        "sides": [1.1, 4.0, 8.0], "radius": 0.5, "nodes": 128, "container_radius": 10.0,
        "container_nodes": 256, "datum": 1.0, "cycles": 100, "tol": 1e-10, "seed": 0,
    },
    "divergence_case": {
        "disk_radius": 2.0, "r_inner": 3.0, "r_outer": 5.0, "half_angle_deg": 30.0,
        "disk_nodes": 128, "cshape_nodes": 1024, "container_radius": 10.0, "container_nodes": 256,
        "dirichlet_datum": 1.0, "neumann_datum": 1.0, "cycles": 200, "tol": 1e-6, "seed": 0,
    },
    "distance_sweep": {
        "distances": [2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0], "radius": 1.0, "nodes": 128,
        "cycles": 30, "discard": 2, "fit_count": 5, "seed": 0,
    },
    "projection_demo": {
        "preset": "random", "angle_deg": 90.0, "dim": 8, "dims": [5, 5, 6], "shared": 2,
        "steps": 200, "seed": 0,
    },
}

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "arctan2": np.arctan2, "atan2": np.arctan2,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
}
_NAMES = {"x", "y", "theta", "pi", "e"} | set(_FUNCS)
_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod,
)


class ConfigError(ValueError):
    pass


def compile_expression(text: str):
    """Compile a datum expression into ``f(x, y, theta)``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ConfigError(f"unsupported syntax in expression {text!r}")
        if isinstance(node, ast.Name) and node.id not in _NAMES:
            raise ConfigError(f"unknown name {node.id!r} in expression {text!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError(f"unsupported call in expression {text!r}")
    code = compile(tree, "<datum>", "eval")

    def f(x, y, theta):
        env = dict(_FUNCS, x=x, y=y, theta=theta, pi=math.pi, e=math.e)
        return eval(code, {"__builtins__": {}}, env)

    return f


def parse_datum(text: str):
    try:
        return float(text)
    except ValueError:
        return compile_expression(text)


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    sections: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    source: Optional[str] = None

    def digest(self) -> str:
        """SHA-256 of the effective settings (not of the file bytes)."""
        payload = json.dumps({"kind": self.kind, "params": self.params, "sections": self.sections}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def line_of(self, section: str, key: str) -> Optional[int]:
        """Line of ``key`` in ``section``, else of the section header."""
        return self.lines.get((section, key), self.lines.get((section, None)))

    def error(self, section: str, key: str, msg: str) -> ConfigError:
        where = self.line_of(section, key)
        loc = f"{self.source or '<config>'}:{where}: " if where else f"{self.source or '<config>'}: "
        return ConfigError(f"{loc}[{section}] {key}: {msg}")


def _line_numbers(text: str) -> dict:
    out, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[(.+)\]$", line)
        if m:
            section = m.group(1).strip()
            out[(section, None)] = no
            continue
        m = re.match(r"^([^=:#;]+?)\s*[=:]", line)
        if m and section is not None:
            out[(section, m.group(1).strip().lower())] = no
    return out


def _coerce(default, text: str):
    if isinstance(default, list):
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    if isinstance(default, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def parse_config(text: str, kind: Optional[str] = None, source: Optional[str] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    lines = _line_numbers(text)
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    exp = sections.pop("experiment", {})
    k = (exp.pop("kind", None) or kind or "").replace("-", "_")
    if kind is not None and k != kind.replace("-", "_"):
        where = lines.get(("experiment", "kind"))
        raise ConfigError(f"{source or '<config>'}:{where}: config is for {k!r}, command runs {kind!r}")
    if k not in KINDS:
        raise ConfigError(f"{source or '<config>'}: unknown experiment kind {k!r}")
    params = dict(DEFAULTS[k])
    cfg = ExperimentConfig(k, params, sections, lines, source)
    for key, value in exp.items():
        if key not in params:
            raise cfg.error("experiment", key, "unknown setting")
        try:
            params[key] = _coerce(params[key], value)
        except ValueError:
            raise cfg.error("experiment", key, f"cannot parse {value!r}") from None
    return cfg


def load_config(path, kind: Optional[str] = None) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, kind, str(p))


def default_config(kind: str) -> ExperimentConfig:
    return parse_config("", kind)


def _get(cfg: ExperimentConfig, section: str, key: str, conv, default=None):
    raw = cfg.sections[section].get(key)
    if raw is None:
        if default is None:
            raise cfg.error(section, key, "missing")
        return default
    try:
        return conv(raw)
    except (ValueError, ConfigError) as exc:
        raise cfg.error(section, key, str(exc)) from None


def _point(text: str):
    vals = [float(t) for t in text.split(",")]
    if len(vals) != 2:
        raise ValueError("expected 'x, y'")
    return vals


def build_problem(cfg: ExperimentConfig) -> ProblemSpec:
    """Layout and conditions from the ``[container]``/``[object.*]`` sections."""
    obj_sections = [s for s in cfg.sections if s.startswith("object.")]
    if "problem" in cfg.sections and "objects" in cfg.sections["problem"]:
        names = [n.strip() for n in cfg.sections["problem"]["objects"].split(",") if n.strip()]
        for n in names:
            if f"object.{n}" not in cfg.sections:
                raise cfg.error("problem", "objects", f"no section [object.{n}]")
        obj_sections = [f"object.{n}" for n in names]
    if not obj_sections:
        raise ConfigError(f"{cfg.source or '<config>'}: no [object.*] sections")
    objects, conditions = [], []
    for sec in obj_sections:
        name = sec.split(".", 1)[1]
        shape = _get(cfg, sec, "shape", str, "circle")
        center = _get(cfg, sec, "center", _point, [0.0, 0.0])
        nodes = _get(cfg, sec, "nodes", int, 128)
        try:
            if shape == "circle":
                curve = make_circle(center, _get(cfg, sec, "radius", float), nodes, name=name)
            elif shape == "cshape":
                curve = make_cshape(
                    center, _get(cfg, sec, "r_inner", float), _get(cfg, sec, "r_outer", float),
                    math.radians(_get(cfg, sec, "half_angle_deg", float)), nodes, name=name,
                )
            else:
                raise cfg.error(sec, "shape", f"unknown shape {shape!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise cfg.error(sec, "shape", str(exc)) from None
        objects.append(curve)
        bc = _get(cfg, sec, "bc", str, "dirichlet").lower()
        if bc == "fourth":
            conditions.append(BoundaryCondition.fourth_type(_get(cfg, sec, "flux", float, 0.0)))
        elif bc in ("dirichlet", "neumann"):
            datum = _get(cfg, sec, "datum", parse_datum, 0.0)
            conditions.append(BoundaryCondition(bc, datum))
        else:
            raise cfg.error(sec, "bc", f"unknown condition {bc!r}")
    container = None
    if "container" in cfg.sections:
        container = make_circle(
            _get(cfg, "container", "center", _point, [0.0, 0.0]),
            _get(cfg, "container", "radius", float),
            _get(cfg, "container", "nodes", int, 256),
            name="container",
        )
    return ProblemSpec(GeometryLayout(tuple(objects), container), conditions)


def node_summary(problem: ProblemSpec) -> str:
    parts = [f"{c.name}:{c.n_nodes}" for c in problem.layout.curves]
    return ",".join(parts)

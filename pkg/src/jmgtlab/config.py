"""Experiment configuration: JSON structure, validation and field expressions.

Fields may be numbers, node-value lists, or expression strings over the
coordinates ``x`` (and ``y`` in 2-D), e.g. ``"1 + 0.1*sin(x)"``.
"""
from __future__ import annotations

import ast
import copy
import json
import math
import operator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "tanh": np.tanh}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}


class Expression:
    """Safe arithmetic expression in x, y with +, -, *, /, **, sin, cos, exp, sqrt, tanh."""

    def __init__(self, text, field="expression"):
        self.text = str(text)
        self.field = field
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ValidationError(f"cannot parse {self.text!r}", field=field) from exc
        self._check(tree.body)
        self.tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS) or len(node.args) != 1 \
                    or node.keywords:
                raise ValidationError(f"unsupported call in {self.text!r}", field=self.field)
            self._check(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in _CONSTS and node.id not in ("x", "y"):
                raise ValidationError(f"unknown name {node.id!r}", field=self.field)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        else:
            raise ValidationError(f"unsupported syntax in {self.text!r}", field=self.field)

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNOPS[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](self._eval(node.args[0], env))
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            return _CONSTS[node.id]
        return float(node.value)

    def __call__(self, x=0.0, y=0.0):
        return self._eval(self.tree, {"x": np.asarray(x, dtype=float), "y": np.asarray(y, dtype=float)})

    def scalar(self):
        return float(self._eval(self.tree, {}))


def evaluate_field(value, grid, field):
    """Grid values of a config field (number, list or expression string)."""
    try:
        if isinstance(value, str):
            expr = Expression(value, field)
            return grid.evaluate(lambda *c: expr(*c))
        return grid.evaluate(value)
    except ValidationError:
        raise
    except Exception as exc:
        raise ValidationError(f"{exc}", field=field) from exc


def scalar_value(value, field):
    if isinstance(value, str):
        return Expression(value, field).scalar()
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    raise ValidationError(f"expected a number, got {value!r}", field=field)


DEFAULTS = {
    "name": "experiment",
    "grid": {"extents": ["pi"], "points": [64]},
    "n_modes": 16,
    "coefficients": {"kappa": 0.0, "c0_sq": 1.0, "b0": 1.0, "tau": 0.1, "c": 1.0},
    "cutoff": {"m_lo": 1e-3, "m_hi": 5e-3},
    "excitation": {"kind": "separable", "phi_modes": [1.0], "rec_box": [0.2, 0.8],
                   "psi": {"q": 4, "a": 2.0, "amplitude": 1.0}},
    "initial": {"u0": 0.0, "u1": 0.0, "u2": 0.0, "random_amplitude": 0.0},
    "observation": {"kind": "points", "locations": [["pi*(sqrt(5)-1)/2"]], "weights": None,
                    "offset": 0.1},
    "time": {"T": 20.0, "dt": 1e-3, "sample_every": 10},
    "inversion": {"variant": "kappa-c0", "M": 4, "window": 16.0, "epsilon": 1e-3, "s": 1.0,
                  "f2_form": "exact", "direction": {"dkappa": "1 + 0.5*cos(x)",
                                                    "d2": "0.5 + 0.3*sin(2*x)"},
                  "newton_iterations": 10},
    "seed": 0,
    "output": "out",
}

_CHOICES = {
    "excitation.kind": ("separable", "none"),
    "observation.kind": ("points", "averages", "trace"),
    "inversion.variant": ("kappa-only", "kappa-c0", "kappa-b0"),
    "inversion.f2_form": ("exact", "simplified"),
}


def _merge(default, given, path):
    if not isinstance(given, dict):
        raise ValidationError("expected an object", field=path)
    out = copy.deepcopy(default)
    for key, val in given.items():
        sub = f"{path}.{key}" if path else key
        if key not in default:
            raise ValidationError("unknown key", field=sub)
        # nested objects merge recursively, except free-form ones
        if isinstance(default[key], dict) and key not in ("direction",):
            out[key] = _merge(default[key], val, sub)
        elif key == "direction":
            if not isinstance(val, dict) or set(val) - {"dkappa", "d2"}:
                raise ValidationError("expected keys dkappa and d2", field=sub)
            out[key] = {**default[key], **val}
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; ``data`` holds the normalised JSON tree."""

    data: dict

    @classmethod
    def from_dict(cls, d):
        data = _merge(DEFAULTS, d, "")
        cfg = cls(data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON in {path} ({exc})", field="config") from exc
        return cls.from_dict(raw)

    def to_dict(self):
        return copy.deepcopy(self.data)

    def dumps(self):
        return json.dumps(self.data, indent=2, sort_keys=True)

    def save(self, path):
        Path(path).write_text(self.dumps())

    def with_overrides(self, **paths):
        """Copy with dotted-path overrides, e.g. ``{"inversion.M": 8}``."""
        d = self.to_dict()
        for key, val in paths.items():
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = val
        return ExperimentConfig.from_dict(d)

    def __getitem__(self, key):
        return self.data[key]

    # validation -----------------------------------------------------------
    def validate(self):
        d = self.data
        for path, choices in _CHOICES.items():
            sec, key = path.split(".")
            if d[sec][key] not in choices:
                raise ValidationError(f"must be one of {choices}, got {d[sec][key]!r}", field=path)
        ext = d["grid"]["extents"]
        pts = d["grid"]["points"]
        if not isinstance(ext, list) or not 1 <= len(ext) <= 2:
            raise ValidationError("must list one or two lengths", field="grid.extents")
        for i, e in enumerate(ext):
            if scalar_value(e, f"grid.extents[{i}]") <= 0:
                raise ValidationError("must be positive", field="grid.extents")
        if not isinstance(pts, list) or len(pts) != len(ext) or any(
                not isinstance(p, int) or p < 8 for p in pts):
            raise ValidationError("must list one integer >= 8 per axis", field="grid.points")
        n_total = int(np.prod(pts))
        if not isinstance(d["n_modes"], int) or not 1 <= d["n_modes"] <= n_total:
            raise ValidationError(f"must be an integer in [1, {n_total}]", field="n_modes")
        co = d["coefficients"]
        for key in ("tau", "c"):
            if scalar_value(co[key], f"coefficients.{key}") <= 0:
                raise ValidationError("must be positive", field=f"coefficients.{key}")
        for key in ("kappa", "c0_sq", "b0"):
            if isinstance(co[key], str):
                Expression(co[key], f"coefficients.{key}")
        m_lo = scalar_value(d["cutoff"]["m_lo"], "cutoff.m_lo")
        m_hi = scalar_value(d["cutoff"]["m_hi"], "cutoff.m_hi")
        if not 0 < m_lo < m_hi:
            raise ValidationError(f"must satisfy 0 < m_lo < m_hi (got {m_lo}, {m_hi})",
                                  field="cutoff.m_lo")
        psi = d["excitation"]["psi"]
        if not isinstance(psi["q"], int) or psi["q"] < 3:
            raise ValidationError("must be an integer >= 3", field="excitation.psi.q")
        if scalar_value(psi["a"], "excitation.psi.a") <= 0:
            raise ValidationError("must be positive", field="excitation.psi.a")
        box = d["excitation"]["rec_box"]
        if not (isinstance(box, list) and len(box) == 2 and 0 < box[0] < box[1] < 1):
            raise ValidationError("must be [lo, hi] with 0 < lo < hi < 1",
                                  field="excitation.rec_box")
        if not isinstance(d["excitation"]["phi_modes"], list) or not d["excitation"]["phi_modes"]:
            raise ValidationError("must be a non-empty list",
                                  field="excitation.phi_modes")
        tm = d["time"]
        if scalar_value(tm["T"], "time.T") <= 0:
            raise ValidationError("must be positive", field="time.T")
        if scalar_value(tm["dt"], "time.dt") <= 0:
            raise ValidationError("must be positive", field="time.dt")
        if not isinstance(tm["sample_every"], int) or tm["sample_every"] < 1:
            raise ValidationError("must be a positive integer", field="time.sample_every")
        inv = d["inversion"]
        if not isinstance(inv["M"], int) or inv["M"] < 1:
            raise ValidationError("must be a positive integer", field="inversion.M")
        if scalar_value(inv["window"], "inversion.window") <= 0:
            raise ValidationError("must be positive", field="inversion.window")
        if scalar_value(inv["epsilon"], "inversion.epsilon") <= 0:
            raise ValidationError("must be positive", field="inversion.epsilon")
        if not isinstance(d["seed"], int):
            raise ValidationError("must be an integer", field="seed")
        obs = d["observation"]
        extra = set(obs) - {"kind", "locations", "weights", "offset"}
        if extra:
            raise ValidationError("unknown key",
                                  field=f"observation.{sorted(extra)[0]}")
        if obs["kind"] == "averages" and not obs.get("weights"):
            raise ValidationError("is required for averages", field="observation.weights")

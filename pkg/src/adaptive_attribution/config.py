"""Experiment configuration: JSON schema, loading and system construction."""
from __future__ import annotations

import copy
import json

import jsonschema
import numpy as np

from .errors import ConfigError, DomainError
from .model import AdaptiveSystem, Evaluation, InteractionSpace, Kernel, UpdateMap

TARGETS = ("psi", "replay", "interventional", "depth-L", "decomposition", "separation", "certificate", "mc")

_NUM = {"type": "number"}
_NUMS = {"type": "array", "items": _NUM}
_MATRIX = {"type": "array", "items": _NUMS}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["target"],
    "properties": {
        "id": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$", "default": "experiment"},
        "target": {"enum": list(TARGETS)},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object"},
                "inline": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["sizes", "theta1", "kernels", "updates", "evaluation"],
                    "properties": {
                        "sizes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                        "theta1": {**_NUMS, "minItems": 1},
                        "rho": {"type": "number", "exclusiveMinimum": 0},
                        "kernels": {"type": "array", "items": {
                            "type": "object", "additionalProperties": False, "required": ["b"],
                            "properties": {"A": _MATRIX, "b": _NUMS}}},
                        "updates": {"type": "array", "items": {
                            "type": "object", "additionalProperties": False, "required": ["c"],
                            "properties": {"M": {"type": "array", "items": _MATRIX}, "c": _MATRIX}}},
                        "evaluation": {"type": "object", "additionalProperties": False, "required": ["v"],
                                       "properties": {"v": _NUMS, "Q": _MATRIX}},
                    },
                },
            },
        },
        "t": {"type": "integer", "minimum": 1, "default": 1},
        "prefix": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "log": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "eps": {"type": "array", "items": _NUM, "default": [0.5]},
        "L": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "mode": {"enum": ["analytic", "fd"], "default": "analytic"},
        "seed": {"type": "integer", "minimum": 0, "default": 0},
        "n": {"type": "integer", "minimum": 1, "default": 10000},
        "mu0": _NUMS,
        "eta2": _NUMS,
        "q": {"type": "number", "default": 0.25},
        "eta1": _NUM,
        "mu1": {"type": "number", "default": 1.0},
        "gamma_a": {"type": "number", "default": 1.0},
        "gamma_b": {"type": "number", "default": 2.0},
        "sweep": {
            "type": "object",
            "maxProperties": 2,
            "additionalProperties": {"oneOf": [
                _NUMS,
                {"type": "object", "additionalProperties": False, "required": ["start", "stop", "num"],
                 "properties": {"start": _NUM, "stop": _NUM, "num": {"type": "integer", "minimum": 1}}},
            ]},
        },
    },
}


def load_config(path: str) -> dict:
    """Parse and validate a config file; errors carry line/column or field path."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"field {where}: {exc.message}") from None
    cfg = copy.deepcopy(raw)
    for key, prop in SCHEMA["properties"].items():
        if "default" in prop:
            cfg.setdefault(key, copy.deepcopy(prop["default"]))
    if cfg["target"] not in ("separation", "certificate") and "system" not in cfg:
        raise ConfigError(f"target {cfg['target']!r} needs a system")
    return cfg


def _inline_system(desc: dict) -> AdaptiveSystem:
    """Softmax kernels ``softmax(A theta + b)``, affine updates ``theta + w (M_z theta + c_z)``, quadratic ``F``."""
    sizes = desc["sizes"]
    theta1 = np.asarray(desc["theta1"], dtype=float)
    d = theta1.size
    if len(desc["kernels"]) != len(sizes) or len(desc["updates"]) != len(sizes):
        raise ConfigError("inline system needs one kernel and one update per round")
    kernels, updates = [], []
    for s, (n, k, u) in enumerate(zip(sizes, desc["kernels"], desc["updates"]), start=1):
        A = np.asarray(k.get("A", np.zeros((n, d))), dtype=float)
        b = np.asarray(k["b"], dtype=float)
        M = np.asarray(u.get("M", np.zeros((n, d, d))), dtype=float)
        c = np.asarray(u["c"], dtype=float)
        if A.shape != (n, d) or b.shape != (n,) or M.shape != (n, d, d) or c.shape != (n, d):
            raise ConfigError(f"inline round {s}: arrays do not match size {n} and dimension {d}")

        def probs(th, h, A=A, b=b):
            x = A @ th + b
            e = np.exp(x - x.max())
            return e / e.sum()

        def grads(th, h, A=A, probs=probs):
            p = probs(th, h)
            return p[:, None] * (A - p @ A)
        kernels.append(Kernel(probs, grads))
        updates.append(UpdateMap(lambda th, z, w, M=M, c=c: th + w * (M[z] @ th + c[z]),
                                 lambda th, z, w, M=M: np.eye(d) + w * M[z],
                                 lambda th, z, w, M=M, c=c: M[z] @ th + c[z]))
    ev = desc["evaluation"]
    v = np.asarray(ev["v"], dtype=float)
    Q = np.asarray(ev.get("Q", np.zeros((d, d))), dtype=float)
    if v.shape != (d,) or Q.shape != (d, d):
        raise ConfigError("inline evaluation arrays do not match the state dimension")
    Qs = 0.5 * (Q + Q.T)
    return AdaptiveSystem(InteractionSpace(sizes), theta1, updates, kernels,
                          Evaluation(lambda th: float(v @ th + 0.5 * th @ Qs @ th), lambda th: v + Qs @ th),
                          float(desc.get("rho", 1.0)), name="inline")


def build_system(cfg: dict):
    """The configured system: a registry object or an inline :class:`AdaptiveSystem`."""
    from .gallery import build

    desc = cfg["system"]
    if ("name" in desc) == ("inline" in desc):
        raise ConfigError("system needs exactly one of 'name' or 'inline'")
    if "inline" in desc:
        return _inline_system(desc["inline"])
    try:
        return build(desc["name"], desc.get("params"))
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def set_path(cfg: dict, path: str, value):
    """Assign ``value`` at a dotted key path, creating dicts as needed."""
    node = cfg
    keys = path.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value

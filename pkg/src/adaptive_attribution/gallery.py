"""Counterexample families, replay oracles and a registry of named systems."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError
from .model import (
    AdaptiveSystem,
    Evaluation,
    InteractionSpace,
    Kernel,
    UpdateMap,
    _require_prefix,
    future_branches,
)
from .numerics import FD_STEP, derivative, sigmoid

DEFAULT_GRID_POINTS = 41
ORACLE_TOL = 1e-12


def _first_round():
    return UpdateMap(lambda th, z, w: np.array([w - 1.0]), lambda th, z, w: np.zeros((1, 1)),
                     lambda th, z, w: np.ones(1))


def _identity_evaluation(scale=1.0):
    return Evaluation(lambda th: scale * float(th[0]), lambda th: np.array([scale]))


def insufficiency_family(gamma: float) -> AdaptiveSystem:
    """Horizon-2 system whose round-2 outcome is 1 with probability ``sigmoid(gamma * theta)``.

    Round 1 has a single outcome and sets ``theta = w - 1``. Round 2 sets
    ``theta = z`` regardless of state and weight, and ``F(theta) = theta``.
    Replay along either log is therefore flat in ``eps``, while the
    recollected target is ``sigmoid(gamma * eps)``.
    """
    gamma = float(gamma)

    def probs(theta, hist):
        p = float(sigmoid(gamma * theta[0]))
        return np.array([1.0 - p, p])

    def grads(theta, hist):
        p = float(sigmoid(gamma * theta[0]))
        g = gamma * p * (1.0 - p)
        return np.array([[-g], [g]])

    second = UpdateMap(lambda th, z, w: np.array([float(z)]), lambda th, z, w: np.zeros((1, 1)),
                       lambda th, z, w: np.zeros(1))
    return AdaptiveSystem(InteractionSpace((1, 2)), [0.0], [_first_round(), second],
                          [Kernel(lambda th, h: np.ones(1), lambda th, h: np.zeros((1, 1))), Kernel(probs, grads)],
                          _identity_evaluation(), name=f"insufficiency({gamma:g})", meta={"gamma": gamma})


def exogenous_coin(scale: float = 1.0) -> AdaptiveSystem:
    """Horizon-2 fair coin that ignores the learner; round 2 adds the outcome to the state."""
    second = UpdateMap(lambda th, z, w: th + float(z), lambda th, z, w: np.eye(1), lambda th, z, w: np.zeros(1))
    return AdaptiveSystem(InteractionSpace((1, 2)), [0.0], [_first_round(), second],
                          [Kernel(lambda th, h: np.ones(1), lambda th, h: np.zeros((1, 1))),
                           Kernel(lambda th, h: np.array([0.5, 0.5]), lambda th, h: np.zeros((2, 1)))],
                          _identity_evaluation(scale), name="exogenous-coin", meta={"scale": scale})


def default_grid(rho: float = 1.0) -> np.ndarray:
    return np.linspace(-1.0, min(1.0, rho), DEFAULT_GRID_POINTS)


@dataclass
class ReplayOracle:
    """Baseline future law plus every fixed-log replay response curve.

    ``table[i, j]`` is the response of continuation ``continuations[i]`` at
    ``grid[j]``; ``curves`` maps each continuation to its closure.
    """

    t: int
    prefix: tuple
    continuations: list
    baseline: np.ndarray
    grid: np.ndarray
    table: np.ndarray
    curves: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if abs(math.fsum(self.baseline) - 1.0) > ORACLE_TOL:
            raise DomainError("baseline future law does not sum to one")

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "prefix": list(self.prefix),
            "continuations": [list(c) for c in self.continuations],
            "baseline": self.baseline.tolist(),
            "grid": self.grid.tolist(),
            "table": self.table.tolist(),
        }


def replay_oracle(system: AdaptiveSystem, t: int, prefix, grid=None) -> ReplayOracle:
    prefix = _require_prefix(system, t, prefix)
    grid = default_grid(system.rho) if grid is None else np.asarray(grid, dtype=float)
    branches = future_branches(system, t, 0.0, prefix)
    conts = [b.continuation for b in branches]
    baseline = np.array([b.baseline for b in branches])
    from .targets import replay_terminal

    curves = {c: (lambda e, c=c: replay_terminal(system, t, e, prefix + c)) for c in conts}
    table = np.array([[curves[c](float(e)) for e in grid] for c in conts])
    return ReplayOracle(t, prefix, conts, baseline, grid, table, curves)


def oracle_equality(o1: ReplayOracle, o2: ReplayOracle, tol: float = ORACLE_TOL) -> tuple:
    """``(equal, max_deviation)`` over baseline laws and sampled response tables."""
    if (o1.t, o1.prefix) != (o2.t, o2.prefix) or o1.continuations != o2.continuations \
            or o1.grid.shape != o2.grid.shape or not np.array_equal(o1.grid, o2.grid):
        raise DomainError("oracles are defined on different prefixes, continuations or grids")
    dev = max(float(np.max(np.abs(o1.baseline - o2.baseline))), float(np.max(np.abs(o1.table - o2.table))))
    return dev <= tol, dev


def oracle_influence(oracle: ReplayOracle, step: float = FD_STEP) -> float:
    """``sum_c Q0(c) phi_c'(0)`` using only the oracle's curves."""
    lo, hi = float(oracle.grid.min()), float(oracle.grid.max())
    return math.fsum(q * derivative(oracle.curves[c], 0.0, step, lo, hi)
                     for q, c in zip(oracle.baseline, oracle.continuations) if q > 0.0)


def insufficiency_certificate(gamma_a: float, gamma_b: float, eps: float, grid=None) -> dict:
    """JSON-ready certificate that two systems share a replay oracle but not their targets.

    Raises ``DomainError`` when ``gamma_a * eps == gamma_b * eps`` and
    ``AssertionError`` if any certified fact fails.
    """
    from .targets import interventional_influence, psi

    if gamma_a * eps == gamma_b * eps:
        raise DomainError("certificate needs gamma_a * eps != gamma_b * eps")
    systems = [insufficiency_family(gamma_a), insufficiency_family(gamma_b)]
    prefix = (0,)
    oracles = [replay_oracle(s, 1, prefix, grid) for s in systems]
    equal, dev = oracle_equality(*oracles)
    psis = [psi(s, 1, eps, prefix) for s in systems]
    closed = [float(sigmoid(g * eps)) for g in (gamma_a, gamma_b)]
    infl = [interventional_influence(s, 1, prefix, "analytic") for s in systems]
    infl_fd = [interventional_influence(s, 1, prefix, "fd") for s in systems]
    constant = bool(np.all(oracles[0].table == oracles[0].table[:, :1]))
    checks = {
        "oracles_equal": equal,
        "curves_constant": constant,
        "targets_differ": abs(psis[0] - psis[1]) > 0.0,
        "psi_closed_form": max(abs(a - b) for a, b in zip(psis, closed)) <= 1e-12,
        "influence_closed_form": max(abs(i - g / 4) for i, g in zip(infl, (gamma_a, gamma_b))) <= 1e-12,
    }
    cert = {
        "gammas": [gamma_a, gamma_b],
        "eps": eps,
        "prefix": list(prefix),
        "oracle_max_deviation": dev,
        "psi": psis,
        "psi_closed_form": closed,
        "psi_gap": abs(psis[0] - psis[1]),
        "influence": infl,
        "influence_fd": infl_fd,
        "oracle": oracles[0].to_dict(),
        "oracle_b": oracles[1].to_dict(),
        "checks": checks,
        "valid": all(checks.values()),
    }
    if not cert["valid"]:
        failed = [k for k, v in checks.items() if not v]
        raise AssertionError(f"certificate checks failed: {failed}")
    return cert


# registry ---------------------------------------------------------------

def _bandit(**kw):
    from .bandit import BanditConfig, bandit_system

    return bandit_system(BanditConfig.from_mapping(kw))


def _random(seed=0, **kw):
    from .random_systems import random_system

    return random_system(int(seed), **kw)


def _random_exogenous(seed=0, **kw):
    from .random_systems import random_system

    return random_system(int(seed), exogenous=True, **kw)


def _random_action_only(seed=0, **kw):
    from .random_systems import random_action_only

    return random_action_only(int(seed), **kw)


def _frontier(kind):
    def make(gamma=1.0):
        from .action_only import frontier_system

        return frontier_system(kind, float(gamma))
    return make


def _insufficiency_action(gamma=1.0):
    from .action_only import insufficiency_action_only

    return insufficiency_action_only(float(gamma))


REGISTRY: dict = {
    "insufficiency": (lambda gamma=1.0: insufficiency_family(float(gamma)), ("gamma",)),
    "insufficiency-action": (_insufficiency_action, ("gamma",)),
    "frontier-reward": (_frontier("reward"), ("gamma",)),
    "frontier-context": (_frontier("context"), ("gamma",)),
    "exogenous-coin": (lambda scale=1.0: exogenous_coin(float(scale)), ("scale",)),
    "bandit": (_bandit, ("q", "etas", "mu0", "mu1")),
    "random": (_random, ("seed",)),
    "random-exogenous": (_random_exogenous, ("seed",)),
    "random-action-only": (_random_action_only, ("seed",)),
}

_CALL = re.compile(r"^\s*([a-z][a-z0-9-]*)\s*(?:\((.*)\))?\s*$")


def parse_name(text: str) -> tuple:
    """Split ``"name(a, b)"`` into ``("name", [a, b])`` with numeric arguments."""
    m = _CALL.match(text)
    if not m:
        raise DomainError(f"cannot parse system name {text!r}")
    args = []
    if m.group(2) and m.group(2).strip():
        for tok in m.group(2).split(","):
            try:
                args.append(float(tok))
            except ValueError:
                raise DomainError(f"non-numeric argument {tok.strip()!r} in {text!r}") from None
    return m.group(1), args


def build(name: str, params: dict | None = None):
    """Build a registered system from ``"name(args)"`` or ``name`` plus keyword parameters."""
    key, args = parse_name(name)
    if key not in REGISTRY:
        raise DomainError(f"unknown system {key!r}; known: {sorted(REGISTRY)}")
    factory, argnames = REGISTRY[key]
    kw = dict(params or {})
    if len(args) > len(argnames):
        raise DomainError(f"{key} takes at most {len(argnames)} positional arguments")
    for n, v in zip(argnames, args):
        kw.setdefault(n, v)
    try:
        return factory(**kw)
    except TypeError as exc:
        raise DomainError(f"bad parameters for {key}: {exc}") from None


def registry_entries() -> list:
    return [(k, list(v[1])) for k, v in sorted(REGISTRY.items())]

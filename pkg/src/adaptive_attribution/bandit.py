"""Two-armed Bernoulli bandit trained by entropic mirror descent.

The learner state is the logit of the probability of pulling arm 1. After
pulling arm ``a`` with reward ``r`` the logit moves by
``eta * w * r * (a / p - (1 - a) / (1 - p))``. Each round's interaction is
encoded as ``a * 2 + r``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dp
from .action_only import ActionOnlySystem
from .errors import DomainError, RegimeError, NumericError
from .model import Evaluation, replay_prefix
from .numerics import logit, sigmoid

LOG3_OVER_4 = math.log(3.0) / 4.0
EDGE = 1e-12
REALIZED_11 = 3


@dataclass(frozen=True)
class BanditConfig:
    """Bandit parameters.

    Attributes
    ----------
    q : float
        Initial probability of pulling arm 1, strictly inside (0, 1).
    etas : tuple of float
        Learning rates ``eta_1..eta_T``; the horizon is ``len(etas)``.
    mu0, mu1 : float
        Reward probabilities of arms 0 and 1.
    F, F_prime : callable, optional
        Terminal evaluation as a function of the final pull probability and
        its derivative. Defaults to the identity.
    """

    q: float
    etas: tuple
    mu0: float
    mu1: float
    F: Callable | None = field(default=None, compare=False)
    F_prime: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "etas", tuple(float(e) for e in np.atleast_1d(self.etas)))
        if not 0.0 < self.q < 1.0:
            raise DomainError(f"q must lie strictly inside (0, 1), got {self.q}")
        if not self.etas or any(e < 0 or not math.isfinite(e) for e in self.etas):
            raise DomainError("learning rates must be finite and nonnegative")
        for mu in (self.mu0, self.mu1):
            if not 0.0 <= mu <= 1.0:
                raise DomainError(f"reward probability {mu} outside [0, 1]")
        if (self.F is None) != (self.F_prime is None):
            raise DomainError("F and F_prime must be given together")

    @property
    def T(self) -> int:
        return len(self.etas)

    @classmethod
    def from_mapping(cls, m: dict) -> "BanditConfig":
        etas = m.get("etas", (LOG3_OVER_4, 2.0))
        return cls(float(m.get("q", 0.25)), tuple(etas), float(m.get("mu0", 0.95)), float(m.get("mu1", 1.0)))

    def scaled(self, factor: float) -> "BanditConfig":
        return BanditConfig(self.q, tuple(factor * e for e in self.etas), self.mu0, self.mu1, self.F, self.F_prime)


def _prob(x) -> float:
    p = float(sigmoid(float(x)))
    if p < EDGE or p > 1.0 - EDGE:
        raise NumericError(f"pull probability {p!r} reached the boundary")
    return p


def bandit_system(cfg: BanditConfig) -> ActionOnlySystem:
    def updates():
        for eta in cfg.etas:
            def value(th, z, w, eta=eta):
                _, a, r = z
                p = _prob(th[0])
                return np.array([th[0] + eta * w * r * (a / p - (1 - a) / (1 - p))])

            def jac_theta(th, z, w, eta=eta):
                _, a, r = z
                p = _prob(th[0])
                return np.array([[1.0 - eta * w * r * (a * (1 - p) / p + (1 - a) * p / (1 - p))]])

            def jac_w(th, z, w, eta=eta):
                _, a, r = z
                p = _prob(th[0])
                return np.array([eta * r * (a / p - (1 - a) / (1 - p))])
            yield value, jac_theta, jac_w

    def policy(th, s, x):
        p = float(sigmoid(float(th[0])))
        return np.array([1.0 - p, p])

    def policy_grad(th, s, x):
        p = float(sigmoid(float(th[0])))
        return np.array([[-p * (1 - p)], [p * (1 - p)]])

    mus = (cfg.mu0, cfg.mu1)
    if cfg.F is None:
        ev = Evaluation(lambda th: float(sigmoid(float(th[0]))),
                        lambda th: np.array([float(sigmoid(float(th[0]))) * (1 - float(sigmoid(float(th[0]))))]))
    else:
        def grad(th):
            p = float(sigmoid(float(th[0])))
            return np.array([float(cfg.F_prime(p)) * p * (1 - p)])
        ev = Evaluation(lambda th: float(cfg.F(float(sigmoid(float(th[0]))))), grad)
    return ActionOnlySystem(
        [(1, 2, 2)] * cfg.T, [logit(cfg.q)], list(updates()), policy, policy_grad,
        lambda s, hist: np.array([1.0]),
        lambda s, x, a, hist: np.array([1.0 - mus[a], mus[a]]),
        ev, name=f"bandit(q={cfg.q:g}, mu0={cfg.mu0:g}, mu1={cfg.mu1:g})")


def intermediate_policy(cfg: BanditConfig, eps: float) -> float:
    """Round-2 pull probability after the realized first interaction (1, 1) with weight ``1 + eps``."""
    return float(sigmoid(logit(cfg.q) + cfg.etas[0] * (1.0 + eps) / cfg.q))


def intermediate_sensitivity(cfg: BanditConfig) -> float:
    """``d p_2 / d eps`` at zero."""
    p = intermediate_policy(cfg, 0.0)
    return cfg.etas[0] / cfg.q * p * (1.0 - p)


def round2_functions(eta2: float) -> tuple:
    """``(f, g, f', g')``: round-2 pull probability after a rewarded pull of arm 1 / arm 0."""
    if eta2 <= 0:
        raise DomainError("eta2 must be positive")

    def _check(p):
        if not 0.0 < p < 1.0:
            raise DomainError(f"p={p} must lie strictly inside (0, 1)")

    def f(p):
        _check(p)
        return float(sigmoid(logit(p) + eta2 / p))

    def g(p):
        _check(p)
        return float(sigmoid(logit(p) - eta2 / (1.0 - p)))

    def fp(p):
        v = f(p)
        return v * (1 - v) * (1.0 / (p * (1 - p)) - eta2 / p ** 2)

    def gp(p):
        v = g(p)
        return v * (1 - v) * (1.0 / (p * (1 - p)) - eta2 / (1 - p) ** 2)
    return f, g, fp, gp


def half_point_slope(eta: float) -> float:
    """Common value of ``f'(1/2)`` and ``g'(1/2)``."""
    return -(eta - 1.0) / math.cosh(eta) ** 2


@dataclass(frozen=True)
class TwoStepTargets:
    interventional: float
    replay: float
    c: float
    p: float
    G_prime: float
    R: float
    half_point: dict | None = None


def two_step_targets(cfg: BanditConfig) -> TwoStepTargets:
    """Closed-form horizon-2 influences of the realized first interaction (1, 1)."""
    if cfg.T != 2:
        raise DomainError("closed forms need horizon 2")
    if cfg.F is not None:
        raise DomainError("closed forms assume F is the final pull probability")
    p = intermediate_policy(cfg, 0.0)
    c = intermediate_sensitivity(cfg)
    f, g, fp, gp = round2_functions(cfg.etas[1]) if cfg.etas[1] > 0 else (
        lambda x: x, lambda x: x, lambda x: 1.0, lambda x: 1.0)
    m0, m1 = cfg.mu0, cfg.mu1
    R = p * (m1 * fp(p) + 1 - m1) + (1 - p) * (m0 * gp(p) + 1 - m0)
    Gp = (m1 * f(p) + (1 - m1) * p) + p * (m1 * fp(p) + 1 - m1) \
        - (m0 * g(p) + (1 - m0) * p) + (1 - p) * (m0 * gp(p) + 1 - m0)
    half = None
    if abs(p - 0.5) <= 1e-12 and m1 == 1.0 and cfg.etas[1] > 0:
        eta = cfg.etas[1]
        k = half_point_slope(eta)
        half = {
            "R": 0.5 * ((1 - m0) - (1 + m0) * (eta - 1) / math.cosh(eta) ** 2),
            "G_prime": float(sigmoid(2 * eta)) - m0 * float(sigmoid(-2 * eta)) + 0.5 * (1 + m0) * k,
        }
    return TwoStepTargets(c * Gp, c * R, c, p, Gp, R, half)


def enumerated_targets(cfg: BanditConfig) -> tuple:
    """``(interventional, conditional expected replay)`` from the generic recursions."""
    tree = dp.ContinuationTree(bandit_system(cfg).system, 1, (REALIZED_11,))
    return tree.root.g, tree.root.m


@dataclass(frozen=True)
class SignFlip:
    continuation: tuple
    payload: tuple
    baseline: float
    replay_influence: float
    interventional: float


def sign_flip_witness(system, t: int, prefix: Sequence[int]) -> SignFlip | None:
    """A positive-probability continuation whose replay influence is negative while the interventional one is positive."""
    from .model import future_branches
    from .targets import replay_influence

    tree = dp.ContinuationTree(system, t, prefix)
    if not tree.root.g > 0.0:
        return None
    best = None
    for b in future_branches(system, t, 0.0, prefix):
        if b.baseline <= 0.0:
            continue
        r = replay_influence(system, t, tuple(prefix) + b.continuation)
        if r < 0.0 and (best is None or r < best.replay_influence):
            payload = tuple(system.space.decode(t + 1 + k, z) for k, z in enumerate(b.continuation))
            best = SignFlip(b.continuation, payload, b.baseline, r, tree.root.g)
    return best


def realized_sign_flip(cfg: BanditConfig) -> SignFlip | None:
    return sign_flip_witness(bandit_system(cfg).system, 1, (REALIZED_11,))


@dataclass(frozen=True)
class SeparationResult:
    mu0: float
    eta2: float
    replay: float
    intervention: float
    replay_enumerated: float
    intervention_enumerated: float
    separated: bool
    witness: SignFlip | None


def separation_table(eta2_values=(1.5, 2.0, 3.0), mu0_grid=None, q=0.25, eta1=LOG3_OVER_4, mu1=1.0,
                     tol=1e-10) -> list:
    """Closed-form and enumerated influences on a ``(mu0, eta2)`` grid, all points."""
    mu0_grid = np.round(np.arange(0.90, 0.995, 0.01), 2) if mu0_grid is None else mu0_grid
    rows = []
    for eta2 in eta2_values:
        for mu0 in mu0_grid:
            cfg = BanditConfig(q, (eta1, float(eta2)), float(mu0), mu1)
            cf = two_step_targets(cfg)
            ie, re_ = enumerated_targets(cfg)
            if abs(cf.interventional - ie) > tol or abs(cf.replay - re_) > tol:
                raise AssertionError(f"closed form and enumeration disagree at mu0={mu0}, eta2={eta2}")
            sep = cf.replay < 0.0 < cf.interventional and re_ < 0.0 < ie
            rows.append(SeparationResult(float(mu0), float(eta2), cf.replay, cf.interventional, re_, ie, sep,
                                         realized_sign_flip(cfg) if sep else None))
    return rows


def separation_search(eta2_values=(1.5, 2.0, 3.0), mu0_grid=None, **kw) -> list:
    """Grid points where conditional expected replay is negative and the interventional influence positive."""
    return [r for r in separation_table(eta2_values, mu0_grid, **kw) if r.separated]


def replay_threshold(eta2: float) -> float:
    """``mu0`` at which the half-point replay factor changes sign (``mu1 = 1``)."""
    k = (eta2 - 1.0) / math.cosh(eta2) ** 2
    return (1.0 - k) / (1.0 + k)


@dataclass(frozen=True)
class StabilityResult:
    gap: float
    bound: float
    L_F: float
    holds: bool


def _lipschitz(cfg: BanditConfig, c_floor: float) -> float:
    if cfg.F_prime is None:
        return 1.0
    grid = np.linspace(c_floor, 1.0 - c_floor, 10_001)
    return float(max(abs(float(cfg.F_prime(p))) for p in grid))


def check_regime(cfg: BanditConfig, c_floor: float):
    """Raise :class:`RegimeError` unless every baseline path keeps the pull probability in ``[c, 1 - c]``."""
    if not 0.0 < c_floor < 0.5:
        raise DomainError("c_floor must lie in (0, 1/2)")
    cap = c_floor / (1.0 - c_floor)
    if any(e > cap for e in cfg.etas):
        raise RegimeError(f"learning rate above c/(1-c) = {cap:.6g}")
    system = bandit_system(cfg).system
    for h in system.space.histories(system.T):
        for th in replay_prefix(system, np.ones(system.T), h):
            p = float(sigmoid(float(th[0])))
            if not c_floor <= p <= 1.0 - c_floor:
                raise RegimeError(f"pull probability {p:.6g} leaves [c, 1-c] on path {h}", path=h)


def stability_gap_check(cfg: BanditConfig, c_floor: float, t: int = 1, prefix=None) -> StabilityResult:
    """Exact replay/intervention gap and the small-step bound for one realized prefix."""
    check_regime(cfg, c_floor)
    prefix = (REALIZED_11,) * t if prefix is None else tuple(prefix)
    tree = dp.ContinuationTree(bandit_system(cfg).system, t, prefix)
    gap = abs(tree.root.g - tree.root.m)
    L_F = _lipschitz(cfg, c_floor)
    bound = L_F * (cfg.T - t) / (16.0 * c_floor ** 3) * cfg.etas[t - 1] * math.fsum(cfg.etas[t:])
    return StabilityResult(gap, bound, L_F, gap <= bound)


def halving_ratio(cfg: BanditConfig, c_floor: float, t: int = 1, prefix=None) -> float:
    """``gap(eta) / gap(eta / 2)``; close to 4 for a second-order gap."""
    full = stability_gap_check(cfg, c_floor, t, prefix).gap
    half = stability_gap_check(cfg.scaled(0.5), c_floor, t, prefix).gap
    return full / half

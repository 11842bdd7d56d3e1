"""Attribution targets computed by exhaustive enumeration of continuations.

These are the brute-force ground truths. Each infinitesimal quantity has an
``fd`` mode (central differences of enumerated finite quantities) and, where
available, an ``analytic`` mode that uses the exact recursions in :mod:`.dp`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import dp
from .errors import DomainError, SupportInstabilityError
from .model import (
    AdaptiveSystem,
    _require_prefix,
    future_branches,
    one_coordinate_weights,
    prefix_probability,
    replay_prefix,
    replay_states,
)
from .numerics import FD_STEP, derivative, derivative_vector

MODES = ("analytic", "fd")


def _check_mode(mode):
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")


def psi(system: AdaptiveSystem, t: int, eps: float, prefix: Sequence[int]) -> float:
    """Conditional interventional target: expected perturbed terminal value after recollection."""
    return math.fsum(b.law * system.F(b.terminal) for b in future_branches(system, t, eps, prefix))


def replay_terminal(system, t, eps, log) -> float:
    """``F`` of the terminal state when the log is replayed under ``w^{(t, eps)}``."""
    w = one_coordinate_weights(system.T, t, eps, system.rho)
    return system.F(replay_states(system, w, log)[-1])


def replay_influence(system: AdaptiveSystem, t: int, log: Sequence[int], mode: str = "analytic",
                     step: float = FD_STEP, richardson: bool = False) -> float:
    """Derivative at zero of the terminal value along a fixed full log."""
    _check_mode(mode)
    if mode == "fd":
        return derivative(lambda e: replay_terminal(system, t, e, log), 0.0, step, -1.0, system.rho, richardson)
    log = system.space.validate(log)
    gamma = dp.log_sensitivity(system, t, log)[-1]
    theta_end = replay_prefix(system, np.ones(system.T), log)[-1]
    return float(system.grad_F(theta_end) @ gamma)


def conditional_expected_replay(system, t, prefix, mode="analytic", **fd) -> float:
    """Baseline-weighted average of per-log replay influences over continuations."""
    prefix = _require_prefix(system, t, prefix)
    terms = [b.baseline * replay_influence(system, t, prefix + b.continuation, mode, **fd)
             for b in future_branches(system, t, 0.0, prefix) if b.baseline > 0.0]
    return math.fsum(terms)


def interventional_influence(system, t, prefix, mode="analytic", step=FD_STEP, richardson=False) -> float:
    """Derivative at zero of :func:`psi`."""
    _check_mode(mode)
    if mode == "analytic":
        return dp.influence_dp(system, t, prefix)
    return derivative(lambda e: psi(system, t, e, prefix), 0.0, step, -1.0, system.rho, richardson)


def dot_q(system, t, prefix, mode="analytic", step=FD_STEP) -> dict:
    """First-order shift of the conditional future law, ``{continuation: dQ/deps}``.

    The analytic form ``Q^0(c) * S(c)`` needs the support to be stable under
    the perturbation; if a baseline-null continuation has a nonzero
    finite-difference derivative, :class:`SupportInstabilityError` is raised.
    """
    _check_mode(mode)
    prefix = _require_prefix(system, t, prefix)
    branches = future_branches(system, t, 0.0, prefix)
    conts = [b.continuation for b in branches]

    def law(e):
        return np.array([b.law for b in future_branches(system, t, e, prefix)])

    if mode == "fd":
        d = derivative_vector(law, 0.0, step, -1.0, system.rho)
        return dict(zip(conts, (float(x) for x in d)))
    out = {}
    fd_vals = None
    for k, b in enumerate(branches):
        if b.baseline > 0.0:
            out[b.continuation] = b.baseline * dp.future_law_score(system, t, prefix + b.continuation)
        else:
            if fd_vals is None:
                fd_vals = derivative_vector(law, 0.0, step, -1.0, system.rho)
            if abs(fd_vals[k]) > 1e-8:
                raise SupportInstabilityError(
                    f"continuation {b.continuation} has zero baseline mass but derivative {fd_vals[k]:.3g}")
            out[b.continuation] = 0.0
    return out


@dataclass(frozen=True)
class Decomposition:
    """Both sides of the replay plus future-law identity, computed independently."""

    replay_term: float
    future_law_term: float
    total: float
    residual: float
    centered_future_law_term: float
    dot_q_sum: float
    mode: str


def structural_decomposition(system, t, prefix, mode="analytic") -> Decomposition:
    """Split the interventional influence into conditional expected replay and a future-law term.

    ``total`` comes from :func:`interventional_influence`; the two terms come
    from per-log replay influences and :func:`dot_q`. The residual is
    reported, never asserted.
    """
    prefix = _require_prefix(system, t, prefix)
    replay_term = conditional_expected_replay(system, t, prefix, mode)
    dq = dot_q(system, t, prefix, mode)
    base = {b.continuation: system.F(b.baseline_terminal) for b in future_branches(system, t, 0.0, prefix)}
    anchor = system.F(replay_prefix(system, np.ones(system.T), prefix)[-1])
    future = math.fsum(dq[c] * base[c] for c in base)
    centered = math.fsum(dq[c] * (base[c] - anchor) for c in base)
    total = interventional_influence(system, t, prefix, mode)
    return Decomposition(replay_term, future, total, total - (replay_term + future), centered,
                         math.fsum(dq.values()), mode)


def expected_terminal(system, w) -> float:
    """Unconditional expectation of the terminal value when the process runs with weights ``w``."""
    T = system.T
    terms = []

    def walk(s, hist, theta, p):
        if p == 0.0:
            return
        if s > T:
            terms.append(p * system.F(theta))
            return
        probs = system.probs(s, theta, hist)
        for z in range(system.space.size(s)):
            walk(s + 1, hist + (z,), system.update(s, theta, z, w[s - 1]), p * float(probs[z]))

    walk(1, (), np.array(system.theta1), 1.0)
    return math.fsum(terms)


def slot_influence(system, t, step=FD_STEP, richardson=False) -> float:
    """Slot-level influence: derivative of the unconditional expected terminal value."""
    if not 1 <= t <= system.T:
        raise DomainError(f"round {t} outside 1..{system.T}")
    return derivative(lambda e: expected_terminal(system, one_coordinate_weights(system.T, t, e, system.rho)),
                      0.0, step, -1.0, system.rho, richardson)


def prefix_averaged_influence(system, t, mode="analytic") -> float:
    """``sum_h P(h) I_int(h)`` over positive-probability prefixes of length ``t``."""
    terms = []
    for h in system.space.histories(t):
        p = prefix_probability(system, h)
        if p > 0.0:
            terms.append(p * interventional_influence(system, t, h, mode))
    return math.fsum(terms)


@dataclass
class InfluenceReport:
    """Replay and interventional attribution for one realized occurrence.

    ``finite_effects`` maps each requested ``eps`` to the pair
    (conditional expected finite replay effect, finite interventional effect).
    """

    prefix: tuple
    t: int
    replay_influence_cond: float
    interventional_influence: float
    future_law_correction: float
    residual: float
    mode: str
    finite_effects: dict = field(default_factory=dict)


def finite_effects(system, t, eps, prefix) -> tuple:
    prefix = _require_prefix(system, t, prefix)
    pert = future_branches(system, t, eps, prefix)
    rep = math.fsum(b.baseline * (system.F(b.terminal) - system.F(b.baseline_terminal)) for b in pert)
    return rep, psi(system, t, eps, prefix) - psi(system, t, 0.0, prefix)


def influence_report(system, t, prefix, eps_values=(), mode="analytic") -> InfluenceReport:
    dec = structural_decomposition(system, t, prefix, mode)
    rep = InfluenceReport(tuple(prefix), t, dec.replay_term, dec.total, dec.future_law_term, dec.residual, mode)
    for e in eps_values:
        rep.finite_effects[float(e)] = finite_effects(system, t, e, prefix)
    return rep

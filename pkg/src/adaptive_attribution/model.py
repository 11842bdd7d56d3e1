"""Finite-horizon adaptive learning systems and their process algebra.

A system is a horizon ``T``, finite per-round interaction alphabets, an
initial learner state, one update map and one interaction kernel per round,
and a terminal evaluation. Rounds are numbered ``1..T`` throughout the public
API; interactions are integer indices ``0..n_t-1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from .errors import ConditioningError, DomainError, NumericError

Prefix = tuple  # tuple[int, ...]


@dataclass(frozen=True)
class InteractionSpace:
    """Per-round finite alphabets ``Z_1, ..., Z_T``.

    ``payloads[t-1][z]`` optionally decodes index ``z`` of round ``t`` into a
    structured value such as an ``(action, reward)`` pair.
    """

    sizes: tuple
    payloads: tuple | None = None

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if len(sizes) < 1:
            raise DomainError("horizon must be at least 1")
        if any(n < 1 for n in sizes):
            raise DomainError(f"every round needs at least one interaction, got {sizes}")
        object.__setattr__(self, "sizes", sizes)
        if self.payloads is not None:
            payloads = tuple(tuple(p) for p in self.payloads)
            if len(payloads) != len(sizes) or any(len(p) != n for p, n in zip(payloads, sizes)):
                raise DomainError("payload tables must match the round cardinalities")
            for p in payloads:
                if len(set(p)) != len(p):
                    raise DomainError("payload decoding must be injective")
            object.__setattr__(self, "payloads", payloads)

    @property
    def T(self) -> int:
        return len(self.sizes)

    def size(self, t: int) -> int:
        return self.sizes[t - 1]

    def decode(self, t: int, z: int) -> Any:
        if self.payloads is None:
            return z
        return self.payloads[t - 1][z]

    def encode(self, t: int, payload: Any) -> int:
        if self.payloads is None:
            return int(payload)
        return self.payloads[t - 1].index(payload)

    def validate(self, seq: Sequence[int], start: int = 1) -> Prefix:
        """Return ``seq`` as a tuple after checking each entry against its round."""
        seq = tuple(int(z) for z in seq)
        if start - 1 + len(seq) > self.T:
            raise DomainError(f"sequence of length {len(seq)} starting at round {start} exceeds horizon {self.T}")
        for k, z in enumerate(seq):
            n = self.sizes[start - 1 + k]
            if not 0 <= z < n:
                raise DomainError(f"interaction {z} invalid at round {start + k} (size {n})")
        return seq

    def histories(self, length: int) -> Iterator[Prefix]:
        """All prefixes ``z_{1:length}`` in lexicographic order."""
        return itertools.product(*(range(n) for n in self.sizes[:length]))

    def continuations(self, t: int) -> Iterator[Prefix]:
        """All continuations ``z_{t+1:T}`` in lexicographic order."""
        return itertools.product(*(range(n) for n in self.sizes[t:]))


@dataclass(frozen=True)
class UpdateMap:
    """Learner update ``U_t(theta, z, w)`` with its two Jacobians."""

    value: Callable[[np.ndarray, int, float], np.ndarray]
    jac_theta: Callable[[np.ndarray, int, float], np.ndarray]
    jac_w: Callable[[np.ndarray, int, float], np.ndarray]


@dataclass(frozen=True)
class Kernel:
    """Interaction law of one round as a function of learner state and history.

    ``probs(theta, prefix)`` returns the full mass vector over the round's
    alphabet and ``grads(theta, prefix)`` the matching ``(n_t, d)`` array of
    state gradients.
    """

    probs: Callable[[np.ndarray, Prefix], np.ndarray]
    grads: Callable[[np.ndarray, Prefix], np.ndarray]

    def mass(self, theta, prefix, z) -> float:
        return float(self.probs(theta, tuple(prefix))[z])

    def grad_theta(self, theta, prefix, z) -> np.ndarray:
        return np.asarray(self.grads(theta, tuple(prefix)))[z]


@dataclass(frozen=True)
class Evaluation:
    """Terminal evaluation functional and its gradient."""

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AdaptiveSystem:
    """Immutable description of a finite-horizon adaptive learning process."""

    space: InteractionSpace
    theta1: np.ndarray
    updates: tuple
    kernels: tuple
    evaluation: Evaluation
    rho: float = 1.0
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        theta1 = np.atleast_1d(np.asarray(self.theta1, dtype=float))
        if theta1.ndim != 1 or theta1.size < 1:
            raise DomainError("initial state must be a non-empty vector")
        theta1.setflags(write=False)
        object.__setattr__(self, "theta1", theta1)
        object.__setattr__(self, "updates", tuple(self.updates))
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if len(self.updates) != self.space.T or len(self.kernels) != self.space.T:
            raise DomainError("need exactly one update map and one kernel per round")
        if not self.rho > 0:
            raise DomainError(f"weight cap rho must be positive, got {self.rho}")

    @property
    def T(self) -> int:
        return self.space.T

    @property
    def d(self) -> int:
        return self.theta1.size

    def update(self, s: int, theta, z: int, w: float) -> np.ndarray:
        """Apply ``U_s`` and reject non-finite results."""
        out = np.atleast_1d(np.asarray(self.updates[s - 1].value(theta, z, w), dtype=float))
        if out.shape != (self.d,) or not np.all(np.isfinite(out)):
            raise NumericError(f"update at round {s} produced {out!r}", round=s)
        return out

    def probs(self, s: int, theta, prefix: Prefix) -> np.ndarray:
        return np.asarray(self.kernels[s - 1].probs(theta, prefix), dtype=float)

    def kernel_grads(self, s: int, theta, prefix: Prefix) -> np.ndarray:
        return np.asarray(self.kernels[s - 1].grads(theta, prefix), dtype=float).reshape(self.space.size(s), self.d)

    def F(self, theta) -> float:
        return float(self.evaluation.value(theta))

    def grad_F(self, theta) -> np.ndarray:
        return np.asarray(self.evaluation.grad(theta), dtype=float).reshape(self.d)


def one_coordinate_weights(T: int, t: int, eps: float, rho: float = 1.0) -> np.ndarray:
    """Weights equal to one except ``1 + eps`` at round ``t``."""
    if not 1 <= t <= T:
        raise DomainError(f"round {t} outside 1..{T}")
    if not -1.0 <= eps <= rho:
        raise DomainError(f"eps={eps} outside [-1, {rho}]")
    w = np.ones(T)
    w[t - 1] += eps
    return w


def _check_weights(system: AdaptiveSystem, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (system.T,):
        raise DomainError(f"weight vector must have length {system.T}")
    if np.any(w < 0) or np.any(w > 1 + system.rho):
        raise DomainError(f"weights must lie in [0, {1 + system.rho}]")
    return w


def replay_prefix(system: AdaptiveSystem, w, seq: Sequence[int]) -> list:
    """States ``theta_1 .. theta_{len(seq)+1}`` from pushing ``seq`` through the learner."""
    states = [np.array(system.theta1)]
    for s, z in enumerate(seq, start=1):
        states.append(system.update(s, states[-1], z, w[s - 1]))
    return states


def replay_states(system: AdaptiveSystem, w, log: Sequence[int]) -> list:
    """Replay a full realized log under weights ``w``; returns ``theta_1..theta_{T+1}``."""
    log = system.space.validate(log)
    if len(log) != system.T:
        raise DomainError(f"log must have length {system.T}, got {len(log)}")
    return replay_prefix(system, _check_weights(system, w), log)


def path_probability(system: AdaptiveSystem, w, history: Sequence[int]) -> float:
    """Probability of a full history under the process run with weights ``w``."""
    history = system.space.validate(history)
    if len(history) != system.T:
        raise DomainError(f"history must have length {system.T}")
    return _prefix_mass(system, _check_weights(system, w), history)


def _prefix_mass(system, w, seq) -> float:
    theta = np.array(system.theta1)
    p = 1.0
    for s, z in enumerate(seq, start=1):
        p *= float(system.probs(s, theta, tuple(seq[: s - 1]))[z])
        if p == 0.0:
            return 0.0
        theta = system.update(s, theta, z, w[s - 1])
    return p


def prefix_probability(system: AdaptiveSystem, prefix: Sequence[int], check_round: int | None = None,
                       check_eps: Sequence[float] = ()) -> float:
    """Baseline probability of a prefix ``z_{1:t}``.

    When ``check_round`` is given, the probability under every perturbation
    ``w^{(check_round, eps)}`` for ``eps`` in ``check_eps`` is recomputed and
    must agree to 1e-12 when ``len(prefix) <= check_round``.
    """
    prefix = system.space.validate(prefix)
    base = _prefix_mass(system, np.ones(system.T), prefix)
    if check_round is not None and len(prefix) <= check_round:
        for eps in check_eps:
            w = one_coordinate_weights(system.T, check_round, eps, system.rho)
            pert = _prefix_mass(system, w, prefix)
            if abs(pert - base) > 1e-12:
                raise AssertionError(f"prefix invariance violated: {pert} vs {base} at eps={eps}")
    return base


@dataclass(frozen=True)
class Branch:
    """One continuation of a conditioned rollout.

    ``law`` is its mass under the requested future law, ``baseline`` its mass
    under the baseline conditional law, ``terminal`` the perturbed replayed
    terminal state and ``baseline_terminal`` the baseline one.
    """

    continuation: Prefix
    law: float
    baseline: float
    terminal: np.ndarray
    baseline_terminal: np.ndarray


def _require_prefix(system, t, prefix) -> Prefix:
    if not 1 <= t <= system.T:
        raise DomainError(f"round {t} outside 1..{system.T}")
    prefix = system.space.validate(prefix)
    if len(prefix) != t:
        raise DomainError(f"prefix must have length t={t}, got {len(prefix)}")
    if prefix_probability(system, prefix) <= 0.0:
        raise ConditioningError(f"prefix {prefix} has zero baseline probability")
    return prefix


def future_branches(system: AdaptiveSystem, t: int, eps: float, prefix: Sequence[int],
                    depth: int | None = None) -> list:
    """Enumerate every continuation of ``prefix`` under the perturbation ``w^{(t, eps)}``.

    Kernels of rounds ``t+1 .. t+depth`` are evaluated at the perturbed
    replayed state and later kernels at the baseline state; the learner is
    perturbed throughout. ``depth=None`` means full recollection.
    """
    prefix = _require_prefix(system, t, prefix)
    T = system.T
    if depth is None:
        depth = T - t
    if not 0 <= depth <= T - t:
        raise DomainError(f"depth {depth} outside 0..{T - t}")
    w = one_coordinate_weights(T, t, eps, system.rho)
    states = replay_prefix(system, np.ones(T), prefix[:-1])
    theta_t = states[-1]
    base_start = system.update(t, theta_t, prefix[-1], 1.0)
    pert_start = base_start if eps == 0 else system.update(t, theta_t, prefix[-1], w[t - 1])
    switch = t + depth
    out = []

    def walk(s, hist, th_p, th_b, q_law, q_base):
        if s > T:
            out.append(Branch(hist[t:], q_law, q_base, th_p, th_b))
            return
        pb = system.probs(s, th_b, hist)
        if th_p is th_b:
            pp = pb
        elif s <= switch:
            pp = system.probs(s, th_p, hist)
        else:
            pp = pb
        for z in range(system.space.size(s)):
            nb = system.update(s, th_b, z, 1.0)
            np_ = nb if th_p is th_b else system.update(s, th_p, z, w[s - 1])
            walk(s + 1, hist + (z,), np_, nb, q_law * float(pp[z]), q_base * float(pb[z]))

    walk(t + 1, prefix, pert_start, base_start, 1.0, 1.0)
    return out


def conditional_future_law(system: AdaptiveSystem, t: int, eps: float, prefix: Sequence[int]) -> dict:
    """Perturbed conditional law ``Q^eps_t(. | prefix)`` as ``{continuation: mass}``."""
    return {b.continuation: b.law for b in future_branches(system, t, eps, prefix)}


def is_state_independent(system: AdaptiveSystem, rounds: Sequence[int], rng=None, probes: int = 8,
                         tol: float = 0.0) -> bool:
    """Probe whether the kernels of ``rounds`` ignore the learner state.

    Each probe evaluates a kernel at two random states for a random history;
    masses and gradients must agree (gradients must vanish) to ``tol``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for s in rounds:
        for _ in range(probes):
            hist = tuple(int(rng.integers(n)) for n in system.space.sizes[: s - 1])
            a = rng.normal(size=system.d) * 2
            b = rng.normal(size=system.d) * 2
            if np.max(np.abs(system.probs(s, a, hist) - system.probs(s, b, hist))) > tol:
                return False
            if np.max(np.abs(system.kernel_grads(s, a, hist))) > tol:
                return False
    return True


def total_mass(masses) -> float:
    return math.fsum(masses)

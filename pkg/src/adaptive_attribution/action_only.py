"""Factorized contextual environments and policy-ratio change of measure.

Each round's interaction is a triple ``(x, a, r)`` drawn as context law times
policy times reward law. When only the policy depends on the learner state
(the action-only class) the perturbed future law is the baseline law
reweighted by a pathwise policy ratio, which makes the interventional target
computable from baseline data by importance sampling.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, OverlapError
from .model import (
    AdaptiveSystem,
    Evaluation,
    InteractionSpace,
    Kernel,
    UpdateMap,
    _require_prefix,
    future_branches,
    one_coordinate_weights,
    replay_prefix,
)

MC_CHUNK = 1 << 16


class FactorizedSystem:
    """Environment whose round-``s`` kernel factors as ``D_s(x) pi_theta(a|x) P_s(r|x,a)``.

    Parameters
    ----------
    alphabets : sequence of (n_x, n_a, n_r)
        Per-round context, action and reward alphabet sizes.
    theta1 : array-like
        Initial learner state.
    updates : sequence of callables ``(value, jac_theta, jac_w)``
        Update maps acting on decoded ``(x, a, r)`` payloads.
    policy, policy_grad : callables ``(theta, s, x) -> (n_a,)`` and ``(n_a, d)``
    context_law : callable ``(theta, s, hist) -> (n_x,)``
    reward_law : callable ``(theta, s, x, a, hist) -> (n_r,)``
    context_grad, reward_grad : optional callables returning ``(n_x, d)`` / ``(n_r, d)``
        State gradients of the context and reward laws; ``None`` means the law
        ignores the learner state.
    evaluation : Evaluation
    """

    def __init__(self, alphabets, theta1, updates, policy, policy_grad, context_law, reward_law, evaluation,
                 rho=1.0, context_grad=None, reward_grad=None, name=""):
        self.alphabets = tuple(tuple(int(v) for v in a) for a in alphabets)
        self.policy = policy
        self.policy_grad = policy_grad
        self.context_law = context_law
        self.reward_law = reward_law
        self.context_grad = context_grad
        self.reward_grad = reward_grad
        self.name = name
        payloads = [
            [(x, a, r) for x in range(nx) for a in range(na) for r in range(nr)] for nx, na, nr in self.alphabets
        ]
        space = InteractionSpace(tuple(len(p) for p in payloads), payloads)
        theta1 = np.atleast_1d(np.asarray(theta1, dtype=float))
        self.d = theta1.size
        maps = []
        for s, (value, jac_theta, jac_w) in enumerate(updates, start=1):
            maps.append(self._wrap_update(space, s, value, jac_theta, jac_w))
        kernels = [Kernel(self._probs_fn(s), self._grads_fn(s)) for s in range(1, len(self.alphabets) + 1)]
        self.system = AdaptiveSystem(space, theta1, maps, kernels, evaluation, rho, name)

    @staticmethod
    def _wrap_update(space, s, value, jac_theta, jac_w):
        dec = space.payloads[s - 1]
        return UpdateMap(lambda th, z, w: value(th, dec[z], w),
                         lambda th, z, w: jac_theta(th, dec[z], w),
                         lambda th, z, w: jac_w(th, dec[z], w))

    @property
    def T(self):
        return len(self.alphabets)

    def factors(self, s, theta, hist):
        """Per-outcome ``(D, pi, P)`` arrays of shape ``(n_x,)``, ``(n_x, n_a)``, ``(n_x, n_a, n_r)``."""
        nx, na, nr = self.alphabets[s - 1]
        D = np.asarray(self.context_law(theta, s, hist), dtype=float).reshape(nx)
        pi = np.stack([np.asarray(self.policy(theta, s, x), dtype=float).reshape(na) for x in range(nx)])
        P = np.stack([
            np.stack([np.asarray(self.reward_law(theta, s, x, a, hist), dtype=float).reshape(nr) for a in range(na)])
            for x in range(nx)
        ])
        return D, pi, P

    def _probs_fn(self, s):
        def probs(theta, hist):
            D, pi, P = self.factors(s, theta, hist)
            return (D[:, None, None] * pi[:, :, None] * P).reshape(-1)
        return probs

    def _grads_fn(self, s):
        nx, na, nr = self.alphabets[s - 1]

        def grads(theta, hist):
            D, pi, P = self.factors(s, theta, hist)
            d = self.d
            gpi = np.stack([np.asarray(self.policy_grad(theta, s, x), dtype=float).reshape(na, d) for x in range(nx)])
            out = D[:, None, None, None] * gpi[:, :, None, :] * P[..., None]
            if self.context_grad is not None:
                gD = np.asarray(self.context_grad(theta, s, hist), dtype=float).reshape(nx, d)
                out = out + gD[:, None, None, :] * (pi[:, :, None] * P)[..., None]
            if self.reward_grad is not None:
                gP = np.stack([
                    np.stack([np.asarray(self.reward_grad(theta, s, x, a, hist), dtype=float).reshape(nr, d)
                              for a in range(na)]) for x in range(nx)
                ])
                out = out + (D[:, None, None] * pi[:, :, None])[..., None] * gP
            return out.reshape(nx * na * nr, d)
        return grads

    def is_action_only(self, probes=8, seed=0) -> bool:
        """Probe that context and reward laws agree at distinct learner states."""
        if self.context_grad is not None or self.reward_grad is not None:
            return False
        rng = np.random.default_rng(seed)
        for s in range(1, self.T + 1):
            nx, na, _ = self.alphabets[s - 1]
            for _ in range(probes):
                hist = tuple(int(rng.integers(n)) for n in self.system.space.sizes[: s - 1])
                a_, b_ = rng.normal(size=self.d) * 2, rng.normal(size=self.d) * 2
                if not np.array_equal(self.context_law(a_, s, hist), self.context_law(b_, s, hist)):
                    return False
                for x in range(nx):
                    for a in range(na):
                        if not np.array_equal(self.reward_law(a_, s, x, a, hist), self.reward_law(b_, s, x, a, hist)):
                            return False
        return True


class ActionOnlySystem(FactorizedSystem):
    """Factorized system in which only the policy sees the learner state.

    ``context_law(s, hist)`` and ``reward_law(s, x, a, hist)`` take no state.
    """

    def __init__(self, alphabets, theta1, updates, policy, policy_grad, context_law, reward_law, evaluation,
                 rho=1.0, name=""):
        super().__init__(alphabets, theta1, updates, policy, policy_grad,
                         lambda th, s, hist: context_law(s, hist),
                         lambda th, s, x, a, hist: reward_law(s, x, a, hist),
                         evaluation, rho, name=name)


def _as_system(obj) -> AdaptiveSystem:
    return obj.system if isinstance(obj, FactorizedSystem) else obj


def _require_action_only(aos):
    if not isinstance(aos, FactorizedSystem) or not aos.is_action_only():
        raise DomainError("operation requires an action-only factorized system")


def policy_ratio(aos: FactorizedSystem, t: int, eps: float, prefix: Sequence[int], continuation: Sequence[int]) -> float:
    """Pathwise product of perturbed over baseline probabilities of the realized actions."""
    _require_action_only(aos)
    system = aos.system
    prefix = _require_prefix(system, t, prefix)
    cont = system.space.validate(continuation, start=t + 1)
    if len(cont) != system.T - t:
        raise DomainError(f"continuation must cover rounds {t + 1}..{system.T}")
    path = prefix + cont
    w = one_coordinate_weights(system.T, t, eps, system.rho)
    base = replay_prefix(system, np.ones(system.T), path)
    pert = replay_prefix(system, w, path)
    ratio = 1.0
    for s in range(t + 1, system.T + 1):
        x, a, _ = system.space.decode(s, path[s - 1])
        den = float(np.asarray(aos.policy(base[s - 1], s, x))[a])
        if den <= 0.0:
            raise OverlapError(f"baseline policy gives zero mass to action {a} at round {s}", witness=cont, round=s)
        ratio *= float(np.asarray(aos.policy(pert[s - 1], s, x))[a]) / den
    return ratio


@dataclass(frozen=True)
class OverlapResult:
    ok: bool
    witness: tuple | None = None


def overlap_check(aos, t, prefix, eps) -> OverlapResult:
    """Check that every continuation charged by the perturbed law is baseline-supported."""
    for b in future_branches(_as_system(aos), t, eps, prefix):
        if b.law > 0.0 and b.baseline == 0.0:
            return OverlapResult(False, b.continuation)
    return OverlapResult(True)


def _weighted_values(aos, t, eps, prefix):
    """Baseline masses and ``Lambda * F(theta^eps_{T+1})`` per supported continuation."""
    system = aos.system
    res = overlap_check(aos, t, prefix, eps)
    if not res.ok:
        raise OverlapError(f"continuation {res.witness} has perturbed mass but zero baseline mass",
                           witness=res.witness)
    probs, vals = [], []
    for b in future_branches(system, t, eps, prefix):
        if b.baseline > 0.0:
            probs.append(b.baseline)
            vals.append(policy_ratio(aos, t, eps, prefix, b.continuation) * system.F(b.terminal))
    return np.array(probs), np.array(vals)


def psi_importance(aos, t, eps, prefix) -> float:
    """Interventional target as a baseline expectation of policy-ratio-weighted terminal values."""
    _require_action_only(aos)
    probs, vals = _weighted_values(aos, t, eps, prefix)
    return math.fsum(probs * vals)


@dataclass(frozen=True)
class MCEstimate:
    epsilon: float
    estimate: float
    se: float
    n: int
    seed: int


def mc_psi(aos, t, eps, prefix, n, seed, workers=1) -> MCEstimate:
    """Monte Carlo importance-sampling estimate from ``n`` sampled baseline continuations.

    Continuations are drawn by inverse CDF over the enumerated baseline law.
    Samples are generated in fixed-size chunks, each from its own child of
    ``SeedSequence(seed)``, so the result does not depend on ``workers``.
    """
    _require_action_only(aos)
    if n < 1:
        raise DomainError("need at least one sample")
    probs, vals = _weighted_values(aos, t, eps, prefix)
    cdf = np.cumsum(probs)
    sizes = [MC_CHUNK] * (n // MC_CHUNK) + ([n % MC_CHUNK] if n % MC_CHUNK else [])
    children = np.random.SeedSequence(seed).spawn(len(sizes))

    def draw(args):
        m, ss = args
        u = np.random.default_rng(ss).random(m) * cdf[-1]
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
        return vals[idx]

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(draw, zip(sizes, children)))
    else:
        chunks = [draw(a) for a in zip(sizes, children)]
    sample = np.concatenate(chunks)
    se = float(sample.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return MCEstimate(float(eps), float(sample.mean()), se, int(n), int(seed))


def reachable_set(system, t, prefix, eps_grid, tol=1e-12) -> list:
    """Distinct perturbed terminal states over supported continuations and grid points."""
    sys_ = _as_system(system)
    out: list = []
    for e in eps_grid:
        for b in future_branches(sys_, t, float(e), prefix):
            if b.law > 0.0 and not any(np.max(np.abs(b.terminal - s)) <= tol for s in out):
                out.append(b.terminal)
    return out


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def _binary_law(gamma):
    def law(theta):
        p = _sig(gamma * float(theta[0]))
        return np.array([1.0 - p, p])

    def grad(theta):
        p = _sig(gamma * float(theta[0]))
        g = gamma * p * (1.0 - p)
        return np.array([[-g], [g]])
    return law, grad


def _const(v):
    return lambda *args: np.asarray(v, dtype=float)


def _two_step_updates(select: Callable):
    """Round 1: ``w - 1``; round 2: the selected payload component."""
    first = (lambda th, z, w: np.array([w - 1.0]), lambda th, z, w: np.zeros((1, 1)), lambda th, z, w: np.ones(1))
    second = (lambda th, z, w: np.array([float(select(z))]), lambda th, z, w: np.zeros((1, 1)),
              lambda th, z, w: np.zeros(1))
    return [first, second]


_IDENTITY_F = Evaluation(lambda th: float(th[0]), lambda th: np.ones(1))


def frontier_system(kind: str, gamma: float) -> FactorizedSystem:
    """Horizon-2 system whose round-2 reward (or context) law is ``sigmoid(gamma * theta)``."""
    law, grad = _binary_law(gamma)
    if kind == "reward":
        return FactorizedSystem(
            [(1, 1, 1), (1, 1, 2)], [0.0], _two_step_updates(lambda z: z[2]),
            _const([1.0]), lambda th, s, x: np.zeros((1, 1)),
            _const([1.0]),
            lambda th, s, x, a, hist: law(th) if s == 2 else np.array([1.0]),
            _IDENTITY_F, reward_grad=lambda th, s, x, a, hist: grad(th) if s == 2 else np.zeros((1, 1)),
            name=f"frontier-reward({gamma:g})")
    if kind == "context":
        return FactorizedSystem(
            [(1, 1, 1), (2, 1, 1)], [0.0], _two_step_updates(lambda z: z[0]),
            _const([1.0]), lambda th, s, x: np.zeros((1, 1)),
            lambda th, s, hist: law(th) if s == 2 else np.array([1.0]),
            _const([1.0]),
            _IDENTITY_F, context_grad=lambda th, s, hist: grad(th) if s == 2 else np.zeros((1, 1)),
            name=f"frontier-context({gamma:g})")
    raise DomainError(f"kind must be 'reward' or 'context', got {kind!r}")


def negative_frontier_pair(kind: str, gamma_a: float, gamma_b: float) -> tuple:
    """Two state-dependent environments with identical baseline laws but different influences."""
    if gamma_a == gamma_b:
        raise DomainError("the pair needs two distinct gamma values")
    return frontier_system(kind, gamma_a), frontier_system(kind, gamma_b)


def insufficiency_action_only(gamma: float) -> ActionOnlySystem:
    """Horizon-2 construction recast with the round-2 outcome as an action drawn from ``sigmoid(gamma*theta)``."""
    law, grad = _binary_law(gamma)
    return ActionOnlySystem(
        [(1, 1, 1), (1, 2, 1)], [0.0], _two_step_updates(lambda z: z[1]),
        lambda th, s, x: law(th) if s == 2 else np.array([1.0]),
        lambda th, s, x: grad(th) if s == 2 else np.zeros((1, 1)),
        _const([1.0]), _const([1.0]), _IDENTITY_F, name=f"insufficiency-action({gamma:g})")


def baseline_path_table(system) -> np.ndarray:
    """Baseline probabilities of every full history in lexicographic order."""
    from .model import path_probability

    sys_ = _as_system(system)
    ones = np.ones(sys_.T)
    return np.array([path_probability(sys_, ones, h) for h in sys_.space.histories(sys_.T)])

"""Exact model-based recursions over the continuation tree of a prefix.

Everything here is analytic: forward state sensitivities are propagated with
update Jacobians, continuation values and influence recursions are computed
backwards with kernel masses and kernel gradients. One pass over the tree of
all continuations of ``h = z_{1:t}`` fills every node; the public functions
read from that tree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError
from .model import (
    AdaptiveSystem,
    Prefix,
    _require_prefix,
    future_branches,
    replay_prefix,
)
from .numerics import FD_STEP, derivative

# Exact sign enumeration for the TV supremum is used up to this many outcomes.
MAX_EXACT_TV_OUTCOMES = 16
TV_GRID_POINTS = 4096
TV_PROBES = 10_000
# Bounds can be attained exactly; comparisons allow this much relative rounding.
BOUND_RTOL = 1e-12


@dataclass
class TreeNode:
    """Node for a prefix ``g`` of length ``s-1``; holds ``theta_s(g)`` and friends."""

    prefix: Prefix
    round: int
    theta: np.ndarray
    gamma: np.ndarray
    prob: float
    children: list = field(default_factory=list)
    probs: np.ndarray | None = None
    grads: np.ndarray | None = None
    kdot: np.ndarray | None = None
    value: float = math.nan
    g: float = math.nan
    m: float = math.nan
    xi: float = 0.0
    tv: float = 0.0
    osc: float = 0.0
    jac_norm: float = 0.0


class ContinuationTree:
    """Baseline continuation tree of a realized prefix with all DP quantities.

    Attributes per node (see :class:`TreeNode`): ``gamma`` is the forward
    sensitivity of the replayed state to the round-``t`` weight, ``value`` the
    baseline continuation value, ``g`` the interventional-derivative
    recursion, ``m`` the conditional expected replay recursion, ``xi`` the
    stagewise gap contribution, ``tv`` the total-variation sensitivity of the
    round's kernel, ``osc`` the oscillation of the next-round values and
    ``jac_norm`` the largest update-Jacobian operator norm over outcomes.
    """

    def __init__(self, system: AdaptiveSystem, t: int, prefix: Sequence[int], tv_method: str = "auto",
                 rng=None):
        self.system = system
        self.t = t
        self.prefix = _require_prefix(system, t, prefix)
        self.tv_method = tv_method
        self._rng = np.random.default_rng(0) if rng is None else rng
        self.nodes: dict = {}
        self.by_round: dict = {s: [] for s in range(t + 1, system.T + 2)}
        states = replay_prefix(system, np.ones(system.T), self.prefix[:-1])
        theta_t = states[-1]
        z_t = self.prefix[-1]
        gamma = np.asarray(system.updates[t - 1].jac_w(theta_t, z_t, 1.0), dtype=float).reshape(system.d)
        self.seed_norm = float(np.linalg.norm(gamma))
        theta = system.update(t, theta_t, z_t, 1.0)
        self.root = self._build(self.prefix, t + 1, theta, gamma, 1.0)

    def _build(self, prefix, s, theta, gamma, prob) -> TreeNode:
        system = self.system
        node = TreeNode(prefix=prefix, round=s, theta=theta, gamma=gamma, prob=prob)
        self.nodes[prefix] = node
        self.by_round[s].append(node)
        if s > system.T:
            node.value = system.F(theta)
            node.g = node.m = float(system.grad_F(theta) @ gamma)
            return node
        probs = system.probs(s, theta, prefix)
        grads = system.kernel_grads(s, theta, prefix)
        node.probs, node.grads = probs, grads
        node.kdot = grads @ gamma
        upd = system.updates[s - 1]
        for z in range(system.space.size(s)):
            jac = np.asarray(upd.jac_theta(theta, z, 1.0), dtype=float).reshape(system.d, system.d)
            node.jac_norm = max(node.jac_norm, float(np.linalg.norm(jac, 2)))
            child = self._build(prefix + (z,), s + 1, system.update(s, theta, z, 1.0), jac @ gamma,
                                prob * float(probs[z]))
            node.children.append(child)
        v_next = np.array([c.value for c in node.children])
        node.value = math.fsum(probs * v_next)
        node.m = math.fsum(probs * np.array([c.m for c in node.children]))
        node.g = math.fsum(probs * np.array([c.g for c in node.children])) + math.fsum(node.kdot * v_next)
        node.xi = math.fsum(node.kdot * (v_next - node.value))
        node.osc = float(v_next.max() - v_next.min())
        node.tv = tv_sensitivity(grads, self.tv_method, rng=self._rng)
        return node

    def expected(self, s: int, attr: str) -> float:
        """Conditional expectation given ``h`` of a node attribute at round ``s``."""
        return math.fsum(n.prob * getattr(n, attr) for n in self.by_round[s])


def tv_sensitivity(grads, method: str = "auto", rng=None) -> float:
    """``sup_{|u|=1} 1/2 sum_z |grad_z . u|`` for an ``(n, d)`` gradient array.

    ``exact`` uses the identity ``sum_z |g_z.u| = max_sigma (sum_z sigma_z g_z).u``
    over sign patterns, so the supremum is half the largest norm of a signed
    sum. ``grid`` scans unit directions in the plane (d <= 2) and refines with
    a golden-section search; ``probe`` takes the best of random directions and
    is only a lower bound.
    """
    grads = np.asarray(grads, dtype=float)
    n, d = grads.shape
    if method == "auto":
        method = "exact" if n <= MAX_EXACT_TV_OUTCOMES else ("grid" if d <= 2 else "probe")
    if d == 1:
        return 0.5 * float(np.abs(grads[:, 0]).sum())
    if method == "exact":
        if n == 1:
            return 0.5 * float(np.linalg.norm(grads[0]))
        bits = (np.arange(2 ** (n - 1))[:, None] >> np.arange(n - 1)[None, :]) & 1
        signs = np.hstack([np.ones((bits.shape[0], 1)), 1.0 - 2.0 * bits])
        return 0.5 * float(np.linalg.norm(signs @ grads, axis=1).max())
    if method == "grid":
        if d != 2:
            raise DomainError("grid TV supremum needs d == 2")

        def f(a):
            u = np.array([math.cos(a), math.sin(a)])
            return 0.5 * float(np.abs(grads @ u).sum())

        angles = np.linspace(0.0, math.pi, TV_GRID_POINTS, endpoint=False)
        u = np.stack([np.cos(angles), np.sin(angles)])
        vals = 0.5 * np.abs(grads @ u).sum(axis=0)
        k = int(vals.argmax())
        step = math.pi / TV_GRID_POINTS
        lo, hi = angles[k] - step, angles[k] + step
        invphi = (math.sqrt(5) - 1) / 2
        for _ in range(80):
            a1 = hi - invphi * (hi - lo)
            a2 = lo + invphi * (hi - lo)
            if f(a1) < f(a2):
                lo = a1
            else:
                hi = a2
        return max(float(vals[k]), f(0.5 * (lo + hi)))
    if method == "probe":
        rng = np.random.default_rng(0) if rng is None else rng
        u = rng.normal(size=(d, TV_PROBES))
        u /= np.linalg.norm(u, axis=0)
        return 0.5 * float(np.abs(grads @ u).sum(axis=0).max())
    raise DomainError(f"unknown TV method {method!r}")


def log_sensitivity(system: AdaptiveSystem, t: int, log: Sequence[int]) -> list:
    """Forward sensitivities ``Gamma_{t+1} .. Gamma_{T+1}`` along one full log."""
    log = system.space.validate(log)
    if len(log) != system.T:
        raise DomainError(f"log must have length {system.T}")
    states = replay_prefix(system, np.ones(system.T), log)
    gamma = np.asarray(system.updates[t - 1].jac_w(states[t - 1], log[t - 1], 1.0), dtype=float).reshape(system.d)
    out = [gamma]
    for s in range(t + 1, system.T + 1):
        jac = np.asarray(system.updates[s - 1].jac_theta(states[s - 1], log[s - 1], 1.0), dtype=float)
        gamma = jac.reshape(system.d, system.d) @ gamma
        out.append(gamma)
    return out


def forward_sensitivity(system, t, prefix) -> dict:
    """``{g: Gamma_s(g)}`` for every continuation prefix ``g`` of ``prefix`` (lengths t..T)."""
    tree = ContinuationTree(system, t, prefix)
    return {g: node.gamma.copy() for g, node in tree.nodes.items()}


def continuation_value(system, t, prefix) -> dict:
    """``{g: V_s(g)}`` for every continuation prefix of ``prefix``."""
    tree = ContinuationTree(system, t, prefix)
    return {g: node.value for g, node in tree.nodes.items()}


def influence_dp(system, t, prefix) -> float:
    """Conditional interventional influence from the backward recursion ``G_{t+1}(h)``."""
    return ContinuationTree(system, t, prefix).root.g


def replay_dp(system, t, prefix) -> float:
    """Conditional expected replay from the backward recursion ``M_{t+1}(h)``."""
    return ContinuationTree(system, t, prefix).root.m


def stagewise_xi(system, t, prefix) -> dict:
    """``{s: E[Xi_s | h]}`` for ``s = t+1..T``."""
    tree = ContinuationTree(system, t, prefix)
    return {s: tree.expected(s, "xi") for s in range(t + 1, system.T + 1)}


def future_law_score(system: AdaptiveSystem, t: int, log: Sequence[int]) -> float:
    """Score of the future law along a full log; zero off the baseline support."""
    log = system.space.validate(log)
    states = replay_prefix(system, np.ones(system.T), log)
    gammas = log_sensitivity(system, t, log)
    total = []
    for s in range(t + 1, system.T + 1):
        hist = log[: s - 1]
        p = system.probs(s, states[s - 1], hist)[log[s - 1]]
        if p <= 0.0:
            return 0.0
        g = system.kernel_grads(s, states[s - 1], hist)[log[s - 1]]
        total.append(float(g @ gammas[s - t - 1]) / p)
    return math.fsum(total)


def score_centered_gap(system: AdaptiveSystem, t: int, prefix: Sequence[int]) -> float:
    """Replay/intervention gap as the conditional covariance of terminal value and score."""
    prefix = _require_prefix(system, t, prefix)
    anchor = system.F(replay_prefix(system, np.ones(system.T), prefix)[-1])
    terms = []
    for b in future_branches(system, t, 0.0, prefix):
        if b.baseline > 0.0:
            score = future_law_score(system, t, prefix + b.continuation)
            terms.append(b.baseline * (system.F(b.baseline_terminal) - anchor) * score)
    return math.fsum(terms)


def depth_L_target(system, t, eps, prefix, L) -> float:
    """Expected perturbed terminal value under the depth-``L`` mixed future law."""
    return math.fsum(b.law * system.F(b.terminal) for b in future_branches(system, t, eps, prefix, depth=L))


def depth_L_influence(system, t, prefix, L, mode="analytic", step=FD_STEP, richardson=False) -> float:
    """Derivative at zero of the depth-``L`` target.

    ``analytic``: conditional expected replay plus the first ``L`` stagewise
    contributions. ``fd``: finite difference of :func:`depth_L_target`.
    """
    if not 0 <= L <= system.T - t:
        raise DomainError(f"L={L} outside 0..{system.T - t}")
    if mode == "fd":
        return derivative(lambda e: depth_L_target(system, t, e, prefix, L), 0.0, step, -1.0, system.rho,
                          richardson)
    if mode != "analytic":
        raise DomainError(f"unknown mode {mode!r}")
    tree = ContinuationTree(system, t, prefix)
    return tree.root.m + math.fsum(tree.expected(s, "xi") for s in range(t + 1, t + L + 1))


@dataclass(frozen=True)
class TruncationBounds:
    """Exact omitted tail of a depth-``L`` target and its two upper bounds.

    ``constants`` holds the measured caps used by the uniform bound:
    ``B`` (seed norm) and per-round ``rho``, ``L_tv`` and ``Delta`` maxima.
    """

    L: int
    exact_tail: float
    oscillation_bound: float
    uniform_bound: float
    constants: dict
    tv_method: str

    def chain_holds(self, rtol: float = BOUND_RTOL) -> bool:
        """``|tail| <= oscillation bound <= uniform bound`` up to relative rounding."""
        return dominated(abs(self.exact_tail), self.oscillation_bound, rtol) and \
            dominated(self.oscillation_bound, self.uniform_bound, rtol)


def dominated(a: float, b: float, rtol: float = BOUND_RTOL) -> bool:
    return a <= b + rtol * max(abs(a), abs(b))


def truncation_bounds(system, t, prefix, L, tv_method="auto", tree=None) -> TruncationBounds:
    if not 0 <= L <= system.T - t:
        raise DomainError(f"L={L} outside 0..{system.T - t}")
    tree = ContinuationTree(system, t, prefix, tv_method=tv_method) if tree is None else tree
    T = system.T
    tail_rounds = range(t + L + 1, T + 1)
    exact_tail = math.fsum(tree.expected(s, "xi") for s in tail_rounds)
    osc_bound = math.fsum(
        n.prob * n.tv * float(np.linalg.norm(n.gamma)) * n.osc for s in tail_rounds for n in tree.by_round[s]
    )
    rho_bar = {s: max(n.jac_norm for n in tree.by_round[s]) for s in range(t + 1, T + 1)}
    tv_bar = {s: max(n.tv for n in tree.by_round[s]) for s in range(t + 1, T + 1)}
    delta_bar = {s: max(n.osc for n in tree.by_round[s]) for s in range(t + 1, T + 1)}
    terms = []
    for s in tail_rounds:
        prod = math.prod(rho_bar[u] for u in range(t + 1, s))
        terms.append(tv_bar[s] * delta_bar[s] * prod)
    uniform = tree.seed_norm * math.fsum(terms)
    method = tv_method
    if method == "auto":
        big = max((system.space.size(s) for s in range(t + 1, T + 1)), default=1)
        method = "exact" if (big <= MAX_EXACT_TV_OUTCOMES or system.d == 1) else ("grid" if system.d <= 2 else "probe")
    return TruncationBounds(L, exact_tail, osc_bound, uniform,
                            {"B": tree.seed_norm, "rho": rho_bar, "L_tv": tv_bar, "Delta": delta_bar}, method)


def oscillation_bound(system, t, prefix, tv_method="auto") -> float:
    """Bound on the full replay/intervention gap (the ``L = 0`` tail bound)."""
    return truncation_bounds(system, t, prefix, 0, tv_method).oscillation_bound


@dataclass(frozen=True)
class DepthPoint:
    L: int
    influence: float
    tail: float
    tail_bound: float


def depth_L_curve(system, t, prefix, tv_method="auto") -> list:
    """Depth-``L`` influences for ``L = 0..T-t`` with exact tails and oscillation bounds."""
    tree = ContinuationTree(system, t, prefix, tv_method=tv_method)
    out = []
    for L in range(system.T - t + 1):
        infl = tree.root.m + math.fsum(tree.expected(s, "xi") for s in range(t + 1, t + L + 1))
        b = truncation_bounds(system, t, prefix, L, tv_method, tree=tree)
        out.append(DepthPoint(L, infl, b.exact_tail, b.oscillation_bound))
    return out


"""Seeded invariant suites behind the ``verify`` subcommand."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import action_only as ao
from . import bandit, dp, gallery, gradcheck, targets
from .model import future_branches, path_probability, prefix_probability
from .random_systems import random_action_only, random_case, sample_prefix


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    residual: float
    tolerance: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(self.residual <= self.tolerance)


class _Max:
    """Running maximum of absolute residuals."""

    def __init__(self):
        self.value = 0.0

    def add(self, x):
        self.value = max(self.value, abs(float(x)))


def suite_core(seed=0, n=20, scale=1.0) -> list:
    norm, pref, dec_a, dec_fd, dq, cent, grads = (_Max() for _ in range(7))
    for k in range(n):
        system, t, h = random_case(seed * 1000 + k)
        ones = np.ones(system.T)
        norm.add(math.fsum(path_probability(system, ones, z) for z in system.space.histories(system.T)) - 1.0)
        prefix_probability(system, h, check_round=t, check_eps=(-1.0, -0.3, 0.4, 1.0))
        for e in (-0.5, 0.5):
            w = ones.copy()
            w[t - 1] += e
            pref.add(math.fsum(path_probability(system, w, z) for z in system.space.histories(system.T)) - 1.0)
        a = targets.structural_decomposition(system, t, h, "analytic")
        f = targets.structural_decomposition(system, t, h, "fd")
        dec_a.add(a.residual)
        dec_fd.add(f.residual)
        dq.add(a.dot_q_sum)
        cent.add(a.future_law_term - a.centered_future_law_term)
        g = gradcheck.check_system(system, seed * 1000 + k)
        grads.add(max(0.0, g.update_theta, g.update_w, g.kernel, g.evaluation))
    return [
        Check("core", "path law normalization", norm.value, 1e-10 * scale),
        Check("core", "perturbed path law normalization", pref.value, 1e-10 * scale),
        Check("core", "decomposition residual (analytic)", dec_a.value, 1e-8 * scale),
        Check("core", "decomposition residual (fd)", dec_fd.value, 1e-6 * scale),
        Check("core", "sum of future-law derivative", dq.value, 1e-10 * scale),
        Check("core", "centered vs uncentered future-law term", cent.value, 1e-10 * scale),
        Check("core", "analytic derivatives vs finite differences (excess)", grads.value, 0.0),
    ]


def suite_dp(seed=0, n=20, scale=1.0) -> list:
    exact, stage, score, ends, ident, depth_fd = (_Max() for _ in range(6))
    violations = 0
    for k in range(n):
        system, t, h = random_case(seed * 1000 + k)
        tree = dp.ContinuationTree(system, t, h)
        rep = targets.conditional_expected_replay(system, t, h)
        exact.add(tree.root.g - targets.interventional_influence(system, t, h, "fd"))
        xi = dp.stagewise_xi(system, t, h)
        stage.add(math.fsum(xi.values()) - (tree.root.g - tree.root.m))
        score.add(dp.score_centered_gap(system, t, h) - (tree.root.g - rep))
        ends.add(dp.depth_L_influence(system, t, h, 0) - rep)
        ends.add(dp.depth_L_influence(system, t, h, system.T - t) - tree.root.g)
        for L in range(system.T - t + 1):
            an = dp.depth_L_influence(system, t, h, L)
            b = dp.truncation_bounds(system, t, h, L, tree=tree)
            ident.add(tree.root.g - an - b.exact_tail)
            depth_fd.add(an - dp.depth_L_influence(system, t, h, L, "fd"))
            if not b.chain_holds():
                violations += 1
    return [
        Check("dp", "recursion vs finite-difference influence", exact.value, 1e-6 * scale),
        Check("dp", "stagewise gap sum", stage.value, 1e-8 * scale),
        Check("dp", "score-centered gap", score.value, 1e-8 * scale),
        Check("dp", "depth-L endpoints", ends.value, 1e-8 * scale),
        Check("dp", "depth-L identity residual", ident.value, 1e-8 * scale),
        Check("dp", "depth-L analytic vs fd", depth_fd.value, 1e-6 * scale),
        Check("dp", "bound chain violations", violations, 0),
    ]


def suite_action_only(seed=0, n=10, mc_seeds=100, scale=1.0) -> list:
    com, isr, one = _Max(), _Max(), _Max()
    for k in range(n):
        aos = random_action_only(seed * 1000 + k)
        system = aos.system
        rng = np.random.default_rng([seed, k])
        t = int(rng.integers(1, system.T))
        h = sample_prefix(system, t, rng)
        for e in (-0.5, 0.25, 1.0):
            for b in future_branches(system, t, e, h):
                if b.baseline > 0.0:
                    com.add(b.law - ao.policy_ratio(aos, t, e, h, b.continuation) * b.baseline)
            isr.add(ao.psi_importance(aos, t, e, h) - targets.psi(system, t, e, h))
        for b in future_branches(system, t, 0.0, h):
            if b.baseline > 0.0:
                one.add(ao.policy_ratio(aos, t, 0.0, h, b.continuation) - 1.0)
    aos = random_action_only(seed * 1000)
    rng = np.random.default_rng([seed, 0])
    t = int(rng.integers(1, aos.system.T))
    h = sample_prefix(aos.system, t, rng)
    exact = ao.psi_importance(aos, t, 0.5, h)
    hits = sum(abs((m := ao.mc_psi(aos, t, 0.5, h, 10_000, s)).estimate - exact) <= 4 * m.se for s in range(mc_seeds))
    need = math.ceil(0.95 * mc_seeds)
    return [
        Check("action-only", "change of measure", com.value, 1e-12 * scale),
        Check("action-only", "importance sampling vs enumeration", isr.value, 1e-10 * scale),
        Check("action-only", "policy ratio at eps=0", one.value, 0.0),
        Check("action-only", "Monte Carlo misses beyond 4 SE", mc_seeds - hits, mc_seeds - need,
              f"{hits}/{mc_seeds} seeds within 4 SE at n=1e4"),
    ]


def suite_bandit(seed=0, scale=1.0) -> list:
    cfg = bandit.BanditConfig(0.25, (bandit.LOG3_OVER_4, 2.0), 0.95, 1.0)
    half = abs(bandit.intermediate_policy(cfg, 0.0) - 0.5)
    c = abs(bandit.intermediate_sensitivity(cfg) - bandit.LOG3_OVER_4)
    rows = bandit.separation_table()
    agree = max(max(abs(r.replay - r.replay_enumerated), abs(r.intervention - r.intervention_enumerated)) for r in rows)
    target = [r for r in rows if abs(r.mu0 - 0.95) < 1e-12 and r.eta2 == 2.0][0]
    flip = target.witness
    detail = (f"mu0=0.95 eta2=2 replay={target.replay:.6g} intervention={target.intervention:.6g} "
              f"witness={flip.payload if flip else None}")
    stab = bandit.BanditConfig(0.5, (0.05, 0.05, 0.05), 0.7, 0.4)
    res = bandit.stability_gap_check(stab, 0.3)
    ratio = bandit.halving_ratio(stab, 0.3)
    return [
        Check("bandit", "p2 at the half point", half, 1e-12 * scale),
        Check("bandit", "intermediate sensitivity", c, 1e-12 * scale),
        Check("bandit", "closed forms vs enumeration", agree, 1e-10 * scale),
        Check("bandit", "sign-flip row missing", 0.0 if (target.separated and flip) else 1.0, 0.0, detail),
        Check("bandit", "stability gap minus bound", max(0.0, res.gap - res.bound), 0.0,
              f"gap={res.gap:.6g} bound={res.bound:.6g}"),
        Check("bandit", "halving ratio outside [2, 8]", max(0.0, 2.0 - ratio, ratio - 8.0), 0.0, f"ratio={ratio:.6g}"),
    ]


def suite_gallery(seed=0, n=20, scale=1.0) -> list:
    cert = gallery.insufficiency_certificate(1.0, 2.0, 0.5)
    ins = gallery.replay_oracle(gallery.insufficiency_family(1.0), 1, (0,))
    coin = gallery.replay_oracle(gallery.exogenous_coin(), 1, (0,))
    _, dev = gallery.oracle_equality(ins, coin)
    recon, corr = _Max(), _Max()
    for k in range(n):
        system, t, h = random_case(seed * 1000 + 500 + k, exogenous=True)
        d = targets.structural_decomposition(system, t, h)
        corr.add(d.future_law_term)
        recon.add(gallery.oracle_influence(gallery.replay_oracle(system, t, h)) - d.total)
    return [
        Check("gallery", "certificate oracle deviation (gamma 1 vs 2)", cert["oracle_max_deviation"], 0.0,
              f"psi={cert['psi'][0]:.12g} vs {cert['psi'][1]:.12g}; influence={cert['influence']}"),
        Check("gallery", "oracle distinguishes exogenous coin", 0.0 if dev > 0 else 1.0, 0.0, f"deviation={dev:.3g}"),
        Check("gallery", "exogenous future-law correction", corr.value, 1e-12 * scale),
        Check("gallery", "oracle reconstruction of influence", recon.value, 1e-6 * scale),
    ]


SUITES = {
    "core": suite_core,
    "dp": suite_dp,
    "action-only": suite_action_only,
    "bandit": suite_bandit,
    "gallery": suite_gallery,
}


def run_suite(name: str, seed: int = 0, scale: float = 1.0) -> list:
    if name == "all":
        return [c for key in SUITES for c in SUITES[key](seed=seed, scale=scale)]
    return SUITES[name](seed=seed, scale=scale)

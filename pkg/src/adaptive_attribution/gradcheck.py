"""Finite-difference audits of the analytic derivatives a system supplies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AdaptiveSystem, replay_prefix
from .numerics import jacobian_fd

GRAD_STEP = 1e-4
RTOL = 1e-5
ATOL = 1e-7


@dataclass(frozen=True)
class GradCheck:
    """Worst violations over all probes; ``excess`` is ``max(|a - b| - (ATOL + RTOL |b|))``."""

    update_theta: float
    update_w: float
    kernel: float
    evaluation: float
    mass_sum: float
    grad_sum: float

    @property
    def passed(self) -> bool:
        return max(self.update_theta, self.update_w, self.kernel, self.evaluation) <= 0.0 \
            and self.mass_sum <= 1e-12 and self.grad_sum <= 1e-10


def _excess(analytic, fd) -> float:
    analytic, fd = np.asarray(analytic, dtype=float), np.asarray(fd, dtype=float)
    return float(np.max(np.abs(analytic - fd) - (ATOL + RTOL * np.abs(fd))))


def _probe_states(system, rng, probes):
    """Baseline states reached along random histories, plus small jitters around them."""
    out = []
    for _ in range(probes):
        h = tuple(int(rng.integers(n)) for n in system.space.sizes)
        states = replay_prefix(system, np.ones(system.T), h)
        s = int(rng.integers(1, system.T + 1))
        out.append((s, h[: s - 1], states[s - 1] + rng.normal(scale=0.05, size=system.d)))
    return out


def check_system(system: AdaptiveSystem, seed: int = 0, probes: int = 6) -> GradCheck:
    rng = np.random.default_rng(seed)
    worst = dict(update_theta=-np.inf, update_w=-np.inf, kernel=-np.inf, evaluation=-np.inf,
                 mass_sum=0.0, grad_sum=0.0)
    for s, hist, theta in _probe_states(system, rng, probes):
        upd = system.updates[s - 1]
        w = float(rng.uniform(0.5, 1.5))
        for z in range(system.space.size(s)):
            jt = np.asarray(upd.jac_theta(theta, z, w), dtype=float).reshape(system.d, system.d)
            fd = jacobian_fd(lambda x: system.update(s, x, z, w), theta, GRAD_STEP).reshape(system.d, system.d)
            worst["update_theta"] = max(worst["update_theta"], _excess(jt, fd))
            jw = np.asarray(upd.jac_w(theta, z, w), dtype=float).reshape(system.d)
            fdw = jacobian_fd(lambda v: system.update(s, theta, z, float(v[0])), np.array([w]), GRAD_STEP)
            worst["update_w"] = max(worst["update_w"], _excess(jw, fdw.reshape(system.d)))
        p = system.probs(s, theta, hist)
        g = system.kernel_grads(s, theta, hist)
        worst["mass_sum"] = max(worst["mass_sum"], abs(float(p.sum()) - 1.0))
        worst["grad_sum"] = max(worst["grad_sum"], float(np.max(np.abs(g.sum(axis=0)))))
        fdk = jacobian_fd(lambda x: system.probs(s, x, hist), theta, GRAD_STEP)
        worst["kernel"] = max(worst["kernel"], _excess(g, fdk))
        fdf = jacobian_fd(lambda x: system.F(x), theta, GRAD_STEP)
        worst["evaluation"] = max(worst["evaluation"], _excess(system.grad_F(theta), fdf))
    return GradCheck(**{k: float(v) for k, v in worst.items()})

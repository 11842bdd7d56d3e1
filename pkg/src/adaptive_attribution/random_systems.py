"""Seeded generators of small smooth systems for property and stress testing."""
from __future__ import annotations

import numpy as np

from .model import AdaptiveSystem, Evaluation, InteractionSpace, Kernel, UpdateMap


def _softmax(x):
    e = np.exp(x - x.max())
    return e / e.sum()


def _history_feature(hist) -> float:
    return float(np.cos(sum((k + 1) * (z + 1) for k, z in enumerate(hist))))


def _kernel(A, b, c):
    """Softmax law with logits ``A theta + b + c * phi(hist)``; ``A = 0`` gives an exogenous kernel."""
    def probs(theta, hist):
        return _softmax(A @ theta + b + c * _history_feature(hist))

    def grads(theta, hist):
        p = probs(theta, hist)
        return p[:, None] * (A - p @ A)
    return Kernel(probs, grads)


def _update(alpha, B, c):
    """``theta + alpha * tanh(w (B_z theta + c_z))`` with closed-form Jacobians."""
    d = alpha.shape[1]

    def value(theta, z, w):
        return theta + alpha[z] * np.tanh(w * (B[z] @ theta + c[z]))

    def jac_theta(theta, z, w):
        sech2 = 1.0 - np.tanh(w * (B[z] @ theta + c[z])) ** 2
        return np.eye(d) + (alpha[z] * sech2 * w)[:, None] * B[z]

    def jac_w(theta, z, w):
        u = B[z] @ theta + c[z]
        return alpha[z] * (1.0 - np.tanh(w * u) ** 2) * u
    return UpdateMap(value, jac_theta, jac_w)


def _evaluation(v, Q):
    return Evaluation(lambda th: float(v @ np.sin(th) + 0.5 * th @ Q @ th), lambda th: v * np.cos(th) + Q @ th)


def random_system(seed: int, T: int | None = None, d: int | None = None, sizes=None,
                  exogenous: bool = False, rho: float = 1.0) -> AdaptiveSystem:
    """Draw a random smooth system.

    Horizon ``T`` in 2..4, dimension ``d`` in 1..2 and alphabet sizes in 2..3
    are drawn when not given. With ``exogenous=True`` every kernel ignores the
    learner state.
    """
    rng = np.random.default_rng(seed)
    T = int(rng.integers(2, 5)) if T is None else T
    d = int(rng.integers(1, 3)) if d is None else d
    sizes = tuple(int(rng.integers(2, 4)) for _ in range(T)) if sizes is None else tuple(sizes)
    updates, kernels = [], []
    for n in sizes:
        A = np.zeros((n, d)) if exogenous else rng.normal(scale=1.5, size=(n, d))
        kernels.append(_kernel(A, rng.normal(size=n), rng.normal(scale=0.5, size=n)))
        alpha = rng.uniform(0.3, 1.0, size=(n, d)) * rng.choice([-1.0, 1.0], size=(n, d))
        updates.append(_update(alpha, rng.normal(scale=0.5, size=(n, d, d)), rng.normal(size=(n, d))))
    v = rng.normal(size=d)
    M = rng.normal(scale=0.3, size=(d, d))
    return AdaptiveSystem(InteractionSpace(sizes), rng.normal(scale=0.5, size=d), updates, kernels,
                          _evaluation(v, M + M.T), rho, name=f"random({seed})",
                          meta={"seed": seed, "exogenous": exogenous})


def sample_prefix(system: AdaptiveSystem, t: int, rng) -> tuple:
    """Draw ``z_{1:t}`` from the baseline process."""
    theta = np.array(system.theta1)
    hist: tuple = ()
    for s in range(1, t + 1):
        p = system.probs(s, theta, hist)
        z = int(rng.choice(len(p), p=p / p.sum()))
        theta = system.update(s, theta, z, 1.0)
        hist += (z,)
    return hist


def random_case(seed: int, exogenous: bool = False, **kw) -> tuple:
    """A random system with a round ``t < T`` and a baseline-sampled prefix of length ``t``."""
    system = random_system(seed, exogenous=exogenous, **kw)
    rng = np.random.default_rng([seed, 1])
    t = int(rng.integers(1, system.T))
    return system, t, sample_prefix(system, t, rng)


def random_action_only(seed: int, T: int | None = None, d: int | None = None):
    """Random action-only factorized system with softmax policies and state-free context/reward laws."""
    from .action_only import ActionOnlySystem

    rng = np.random.default_rng([seed, 7])
    T = int(rng.integers(2, 4)) if T is None else T
    d = int(rng.integers(1, 3)) if d is None else d
    alphabets = [(int(rng.integers(1, 3)), int(rng.integers(2, 4)), int(rng.integers(1, 3))) for _ in range(T)]
    na_max = max(a[1] for a in alphabets)
    nx_max = max(a[0] for a in alphabets)
    W = rng.normal(scale=1.5, size=(nx_max, na_max, d))
    bias = rng.normal(size=(nx_max, na_max))
    ctx = [rng.dirichlet(np.ones(nx) * 2) for nx, _, _ in alphabets]
    rew = [rng.dirichlet(np.ones(nr) * 2, size=(nx, na)) for nx, na, nr in alphabets]

    def policy(theta, s, x):
        na = alphabets[s - 1][1]
        return _softmax(W[x, :na] @ theta + bias[x, :na])

    def policy_grad(theta, s, x):
        na = alphabets[s - 1][1]
        p = policy(theta, s, x)
        return p[:, None] * (W[x, :na] - p @ W[x, :na])

    def context_law(s, hist):
        shift = 0.1 * _history_feature(hist)
        p = ctx[s - 1] + shift * (ctx[s - 1] - ctx[s - 1].mean())
        return p / p.sum()

    updates = []
    for nx, na, nr in alphabets:
        n = nx * na * nr
        u = _update(rng.uniform(0.3, 1.0, size=(n, d)) * rng.choice([-1.0, 1.0], size=(n, d)),
                    rng.normal(scale=0.5, size=(n, d, d)), rng.normal(size=(n, d)))

        def flat(z, na=na, nr=nr):
            return z[0] * na * nr + z[1] * nr + z[2]
        updates.append((lambda th, z, w, u=u, flat=flat: u.value(th, flat(z), w),
                        lambda th, z, w, u=u, flat=flat: u.jac_theta(th, flat(z), w),
                        lambda th, z, w, u=u, flat=flat: u.jac_w(th, flat(z), w)))
    v = rng.normal(size=d)
    M = rng.normal(scale=0.3, size=(d, d))
    return ActionOnlySystem(alphabets, rng.normal(scale=0.5, size=d), updates, policy, policy_grad, context_law,
                            lambda s, x, a, hist: rew[s - 1][x, a], _evaluation(v, M + M.T),
                            name=f"random-action-only({seed})")

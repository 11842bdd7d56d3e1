import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adaptive_attribution import (
    AdaptiveSystem,
    ConditioningError,
    Evaluation,
    InteractionSpace,
    Kernel,
    SupportInstabilityError,
    UpdateMap,
)
from adaptive_attribution import targets
from adaptive_attribution.numerics import sigmoid
from adaptive_attribution.random_systems import random_case, random_system


def agree(a, b):
    """Cross-method tolerance: 1e-5 relative or 1e-7 absolute, whichever is looser."""
    return abs(a - b) <= max(1e-7, 1e-5 * abs(b))


def test_psi_insufficiency(insufficiency):
    system, gamma = insufficiency
    for eps in (-1.0, -0.5, 0.0, 0.3, 1.0):
        assert targets.psi(system, 1, eps, (0,)) == pytest.approx(float(sigmoid(gamma * eps)), abs=1e-15)


def test_psi_zero_is_baseline_expectation(case):
    system, t, h = case
    from adaptive_attribution.model import future_branches
    expected = math.fsum(b.baseline * system.F(b.baseline_terminal) for b in future_branches(system, t, 0.0, h))
    assert targets.psi(system, t, 0.0, h) == pytest.approx(expected, abs=1e-14)


def test_replay_influence_insufficiency_is_zero(insufficiency):
    system, _ = insufficiency
    for log in ((0, 0), (0, 1)):
        assert targets.replay_influence(system, 1, log, "analytic") == 0.0
        assert targets.replay_influence(system, 1, log, "fd") == 0.0
    assert targets.conditional_expected_replay(system, 1, (0,)) == 0.0


def test_interventional_insufficiency(insufficiency):
    system, gamma = insufficiency
    assert targets.interventional_influence(system, 1, (0,), "analytic") == pytest.approx(gamma / 4, abs=1e-12)
    assert targets.interventional_influence(system, 1, (0,), "fd") == pytest.approx(gamma / 4, abs=1e-8)


def test_dot_q_insufficiency(insufficiency):
    system, gamma = insufficiency
    # d/de sigmoid(gamma e) at 0 is gamma / 4
    for mode, tol in (("analytic", 1e-15), ("fd", 1e-8)):
        dq = targets.dot_q(system, 1, (0,), mode)
        assert dq[(1,)] == pytest.approx(gamma / 4, abs=tol)
        assert dq[(0,)] == pytest.approx(-gamma / 4, abs=tol)


def test_decomposition_insufficiency(insufficiency):
    system, gamma = insufficiency
    d = targets.structural_decomposition(system, 1, (0,))
    assert d.replay_term == 0.0
    assert d.future_law_term == pytest.approx(gamma / 4, abs=1e-15)
    assert abs(d.residual) <= 1e-15


def test_exogenous_dot_q_vanishes(coin):
    dq = targets.dot_q(coin, 1, (0,))
    assert all(v == 0.0 for v in dq.values())
    d = targets.structural_decomposition(coin, 1, (0,))
    assert d.future_law_term == 0.0
    assert d.total == pytest.approx(d.replay_term, abs=1e-15)


@given(st.integers(0, 100_000))
def test_decomposition_identity(seed):
    system, t, h = random_case(seed)
    a = targets.structural_decomposition(system, t, h, "analytic")
    assert abs(a.residual) <= 1e-8
    assert abs(a.dot_q_sum) <= 1e-10
    assert abs(a.future_law_term - a.centered_future_law_term) <= 1e-10


@given(st.integers(0, 100_000))
def test_decomposition_identity_fd(seed):
    system, t, h = random_case(seed)
    f = targets.structural_decomposition(system, t, h, "fd")
    assert abs(f.residual) <= 1e-6


@given(st.integers(0, 100_000))
def test_modes_agree(seed):
    system, t, h = random_case(seed)
    assert agree(targets.interventional_influence(system, t, h, "fd"),
                 targets.interventional_influence(system, t, h, "analytic"))
    assert agree(targets.conditional_expected_replay(system, t, h, "fd"),
                 targets.conditional_expected_replay(system, t, h, "analytic"))
    log = h + tuple(0 for _ in range(system.T - t))
    assert agree(targets.replay_influence(system, t, log, "fd"), targets.replay_influence(system, t, log, "analytic"))
    fd, an = targets.dot_q(system, t, h, "fd"), targets.dot_q(system, t, h, "analytic")
    assert all(agree(fd[c], an[c]) for c in an)


def test_richardson_refines(case):
    system, t, h = case
    exact = targets.interventional_influence(system, t, h, "analytic")
    rich = targets.interventional_influence(system, t, h, "fd", step=1e-2, richardson=True)
    plain = targets.interventional_influence(system, t, h, "fd", step=1e-2)
    assert abs(rich - exact) <= abs(plain - exact) + 1e-12


def test_exogenous_interventional_equals_expected_replay():
    for seed in range(10):
        system, t, h = random_case(seed, exogenous=True)
        assert targets.interventional_influence(system, t, h) == pytest.approx(
            targets.conditional_expected_replay(system, t, h), abs=1e-12)


def _pin_future(system, t, log):
    """Same system with post-``t`` kernels replaced by point masses at ``log``."""
    kernels = list(system.kernels)
    for s in range(t + 1, system.T + 1):
        n = system.space.size(s)
        mass = np.eye(n)[log[s - 1]]
        kernels[s - 1] = Kernel(lambda th, h, m=mass: m, lambda th, h, n=n, d=system.d: np.zeros((n, d)))
    return AdaptiveSystem(system.space, system.theta1, system.updates, kernels, system.evaluation, system.rho)


@pytest.mark.parametrize("seed", range(5))
def test_full_conditioning_collapses_to_replay(seed):
    system, t, h = random_case(seed)
    log = h + tuple((k % 2) for k in range(system.T - t))
    pinned = _pin_future(system, t, log)
    assert targets.interventional_influence(pinned, t, h) == pytest.approx(
        targets.replay_influence(system, t, log), abs=1e-14)


def test_single_continuation_replay():
    system, t, h = random_case(2)
    log = h + tuple(1 for _ in range(system.T - t))
    pinned = _pin_future(system, t, log)
    assert targets.conditional_expected_replay(pinned, t, h) == pytest.approx(
        targets.replay_influence(pinned, t, log), abs=1e-15)


def test_slot_influence(insufficiency):
    system, gamma = insufficiency
    assert targets.slot_influence(system, 1) == pytest.approx(gamma / 4, abs=1e-8)


@pytest.mark.parametrize("seed", range(4))
def test_slot_influence_total_expectation(seed):
    system = random_system(seed)
    for t in range(1, system.T + 1):
        assert targets.slot_influence(system, t) == pytest.approx(
            targets.prefix_averaged_influence(system, t), abs=1e-6)


def test_finite_effects_and_report(case):
    system, t, h = case
    rep = targets.influence_report(system, t, h, eps_values=(0.0, 1e-3))
    assert rep.finite_effects[0.0] == (0.0, 0.0)
    d_rep, d_int = rep.finite_effects[1e-3]
    assert d_rep / 1e-3 == pytest.approx(rep.replay_influence_cond, abs=1e-2)
    assert d_int / 1e-3 == pytest.approx(rep.interventional_influence, abs=1e-2)
    assert abs(rep.residual) <= 1e-8


def _kinked_system():
    """Round-2 mass of outcome 1 is ``clip(theta, 0, 1)``: zero at baseline, moving with eps."""
    def probs(th, h):
        p = min(max(float(th[0]), 0.0), 1.0)
        return np.array([1.0 - p, p])
    first = UpdateMap(lambda th, z, w: np.array([w - 1.0]), lambda th, z, w: np.zeros((1, 1)),
                      lambda th, z, w: np.ones(1))
    second = UpdateMap(lambda th, z, w: np.array([float(z)]), lambda th, z, w: np.zeros((1, 1)),
                       lambda th, z, w: np.zeros(1))
    return AdaptiveSystem(InteractionSpace((1, 2)), [0.0], [first, second],
                          [Kernel(lambda th, h: np.ones(1), lambda th, h: np.zeros((1, 1))),
                           Kernel(probs, lambda th, h: np.zeros((2, 1)))],
                          Evaluation(lambda th: float(th[0]), lambda th: np.ones(1)))


def test_support_instability_detected():
    with pytest.raises(SupportInstabilityError):
        targets.dot_q(_kinked_system(), 1, (0,), "analytic")


def test_conditioning_error_on_null_prefix():
    from tests.test_model import _zero_prefix_system
    with pytest.raises(ConditioningError):
        targets.psi(_zero_prefix_system(), 1, 0.0, (1,))

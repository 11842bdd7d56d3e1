import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adaptive_attribution import (
    AdaptiveSystem,
    ConditioningError,
    DomainError,
    Evaluation,
    InteractionSpace,
    Kernel,
    NumericError,
    UpdateMap,
    conditional_future_law,
    one_coordinate_weights,
    path_probability,
    prefix_probability,
    replay_states,
)
from adaptive_attribution.model import is_state_independent, replay_prefix
from adaptive_attribution.numerics import sigmoid
from adaptive_attribution.random_systems import random_system


def test_one_coordinate_weights_examples():
    np.testing.assert_array_equal(one_coordinate_weights(3, 2, -1.0), [1, 0, 1])
    np.testing.assert_array_equal(one_coordinate_weights(3, 1, 0.0), [1, 1, 1])
    np.testing.assert_array_equal(one_coordinate_weights(2, 1, 0.5), [1.5, 1])


@pytest.mark.parametrize("t,eps", [(0, 0.0), (4, 0.0), (1, -1.5), (1, 1.01)])
def test_one_coordinate_weights_rejects(t, eps):
    with pytest.raises(DomainError):
        one_coordinate_weights(3, t, eps)


def test_weight_cap_rho():
    assert one_coordinate_weights(2, 1, 2.5, rho=3.0)[0] == 3.5


def test_interaction_space_invariants():
    with pytest.raises(DomainError):
        InteractionSpace(())
    with pytest.raises(DomainError):
        InteractionSpace((2, 0))
    with pytest.raises(DomainError):
        InteractionSpace((2,), payloads=[("a", "a")])
    space = InteractionSpace((2, 3), payloads=[("x", "y"), (0, 1, 2)])
    assert space.decode(1, 1) == "y" and space.encode(1, "y") == 1
    assert list(space.continuations(1)) == [(0,), (1,), (2,)]
    with pytest.raises(DomainError):
        space.validate((0, 3))


def test_insufficiency_replay(insufficiency):
    system, _ = insufficiency
    states = replay_states(system, np.ones(2), (0, 1))
    assert states[1][0] == 0.0 and states[2][0] == 1.0
    for eps in (-1.0, -0.3, 0.4, 1.0):
        states = replay_states(system, one_coordinate_weights(2, 1, eps), (0, 1))
        assert states[1][0] == pytest.approx(eps, abs=1e-15)


def test_replay_is_deterministic(case):
    system, t, _ = case
    log = tuple(0 for _ in range(system.T))
    w = one_coordinate_weights(system.T, t, 0.3)
    a, b = replay_states(system, w, log), replay_states(system, w, log)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_replay_needs_full_log(insufficiency):
    with pytest.raises(DomainError):
        replay_states(insufficiency[0], np.ones(2), (0,))


def test_path_probability_insufficiency(insufficiency):
    system, _ = insufficiency
    assert path_probability(system, np.ones(2), (0, 1)) == 0.5
    assert path_probability(system, np.ones(2), (0, 0)) == 0.5


def test_single_atom_path():
    sys1 = AdaptiveSystem(InteractionSpace((1,)), [0.0],
                          [UpdateMap(lambda th, z, w: th, lambda th, z, w: np.eye(1), lambda th, z, w: np.zeros(1))],
                          [Kernel(lambda th, h: np.ones(1), lambda th, h: np.zeros((1, 1)))],
                          Evaluation(lambda th: float(th[0]), lambda th: np.ones(1)))
    assert path_probability(sys1, np.ones(1), (0,)) == 1.0


@given(st.integers(0, 10_000), st.floats(-1.0, 1.0))
def test_path_law_normalization(seed, eps):
    system = random_system(seed)
    t = 1 + seed % system.T
    w = one_coordinate_weights(system.T, t, eps)
    total = math.fsum(path_probability(system, w, h) for h in system.space.histories(system.T))
    assert abs(total - 1.0) <= 1e-10


@given(st.integers(0, 10_000), st.floats(-1.0, 1.0))
def test_prefix_invariance(seed, eps):
    system = random_system(seed)
    for t in range(1, system.T + 1):
        for h in system.space.histories(t):
            prefix_probability(system, h, check_round=t, check_eps=(eps,))


def test_prefix_probability_examples(insufficiency):
    system, _ = insufficiency
    assert prefix_probability(system, (0,)) == 1.0
    assert prefix_probability(system, ()) == 1.0
    s3 = random_system(4, T=3)
    assert math.fsum(prefix_probability(s3, h) for h in s3.space.histories(2)) == pytest.approx(1.0, abs=1e-12)


def test_conditional_future_law_insufficiency(insufficiency):
    system, gamma = insufficiency
    for eps in (-1.0, -0.25, 0.0, 0.6, 1.0):
        law = conditional_future_law(system, 1, eps, (0,))
        assert law[(1,)] == pytest.approx(float(sigmoid(gamma * eps)), abs=1e-15)
        assert law[(0,)] + law[(1,)] == pytest.approx(1.0, abs=1e-15)


def test_conditional_law_at_zero_is_baseline(case):
    system, t, h = case
    law = conditional_future_law(system, t, 0.0, h)
    base = prefix_probability(system, h)
    for c, q in law.items():
        joint = path_probability(system, np.ones(system.T), h + c)
        assert q == pytest.approx(joint / base, rel=1e-12, abs=1e-15)


@given(st.integers(0, 10_000), st.floats(-1.0, 1.0))
def test_exogenous_future_law_constant(seed, eps):
    system = random_system(seed, exogenous=True)
    assert is_state_independent(system, range(1, system.T + 1))
    h = (0,)
    a = conditional_future_law(system, 1, eps, h)
    b = conditional_future_law(system, 1, 0.0, h)
    assert max(abs(a[c] - b[c]) for c in a) <= 1e-12


def test_state_dependence_probe_detects_endogenous():
    assert not is_state_independent(random_system(1), [1])


def _zero_prefix_system():
    def probs(th, h):
        return np.array([1.0, 0.0])
    upd = UpdateMap(lambda th, z, w: th + w, lambda th, z, w: np.eye(1), lambda th, z, w: np.ones(1))
    return AdaptiveSystem(InteractionSpace((2, 2)), [0.0], [upd, upd],
                          [Kernel(probs, lambda th, h: np.zeros((2, 1)))] * 2,
                          Evaluation(lambda th: float(th[0]), lambda th: np.ones(1)))


def test_zero_probability_prefix_rejected():
    with pytest.raises(ConditioningError):
        conditional_future_law(_zero_prefix_system(), 1, 0.0, (1,))


def test_non_finite_update_reports_round():
    upd = UpdateMap(lambda th, z, w: th / 0.0 if z else th, lambda th, z, w: np.eye(1), lambda th, z, w: np.zeros(1))
    system = AdaptiveSystem(InteractionSpace((1, 2)), [1.0], [upd, upd],
                            [Kernel(lambda th, h: np.ones(1), lambda th, h: np.zeros((1, 1))),
                             Kernel(lambda th, h: np.array([0.5, 0.5]), lambda th, h: np.zeros((2, 1)))],
                            Evaluation(lambda th: float(th[0]), lambda th: np.ones(1)))
    with np.errstate(divide="ignore"):
        with pytest.raises(NumericError) as exc:
            replay_states(system, np.ones(2), (0, 1))
    assert exc.value.round == 2


def test_weights_outside_cap_rejected(insufficiency):
    with pytest.raises(DomainError):
        replay_states(insufficiency[0], np.array([2.5, 1.0]), (0, 1))


def test_system_is_immutable(insufficiency):
    system, _ = insufficiency
    with pytest.raises(ValueError):
        system.theta1[0] = 3.0
    assert replay_prefix(system, np.ones(2), ())[0][0] == 0.0

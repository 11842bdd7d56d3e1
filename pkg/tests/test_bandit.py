import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adaptive_attribution import DomainError, NumericError, RegimeError, targets
from adaptive_attribution import bandit as bd
from adaptive_attribution.action_only import ActionOnlySystem
from adaptive_attribution.model import Evaluation, future_branches, replay_states
from adaptive_attribution.numerics import derivative, sigmoid

HALF = bd.BanditConfig(0.25, (bd.LOG3_OVER_4, 2.0), 0.95, 1.0)


def test_zero_reward_leaves_policy():
    system = bd.bandit_system(bd.BanditConfig(0.3, (0.5, 0.5), 0.5, 0.5)).system
    states = replay_states(system, np.ones(2), (2, 0))
    assert states[0][0] == states[1][0] == states[2][0]


def test_half_point_intermediate_policy():
    system = bd.bandit_system(HALF).system
    p2 = float(sigmoid(replay_states(system, np.ones(2), (3, 3))[1][0]))
    assert abs(p2 - 0.5) <= 1e-12
    assert abs(bd.intermediate_policy(HALF, 0.0) - 0.5) <= 1e-12
    assert abs(bd.intermediate_sensitivity(HALF) - math.log(3) / 4) <= 1e-12


def test_intermediate_sensitivity_matches_fd():
    fd = derivative(lambda e: bd.intermediate_policy(HALF, e), 0.0)
    assert fd == pytest.approx(bd.intermediate_sensitivity(HALF), abs=1e-8)


def test_deleting_first_update_restores_q():
    assert bd.intermediate_policy(HALF, -1.0) == pytest.approx(0.25, abs=1e-15)


def test_reward_law_is_state_free():
    aos = bd.bandit_system(HALF)
    _, _, P1 = aos.factors(1, np.array([0.3]), ())
    _, _, P2 = aos.factors(1, np.array([-2.0]), ())
    assert np.array_equal(P1, P2)
    assert aos.is_action_only()


def test_boundary_probability_is_numeric_error():
    cfg = bd.BanditConfig(0.5, (40.0, 40.0), 1.0, 1.0)
    system = bd.bandit_system(cfg).system
    with pytest.raises(NumericError):
        replay_states(system, np.ones(2), (3, 3))


@pytest.mark.parametrize("eta", [0.5, 1.0, 2.0, 3.0])
def test_half_point_slopes(eta):
    f, g, fp, gp = bd.round2_functions(eta)
    k = -(eta - 1) / math.cosh(eta) ** 2
    assert fp(0.5) == pytest.approx(k, abs=1e-14)
    assert gp(0.5) == pytest.approx(k, abs=1e-14)
    assert derivative(f, 0.5, 1e-4) == pytest.approx(fp(0.5), abs=1e-7)
    assert derivative(g, 0.5, 1e-4) == pytest.approx(gp(0.5), abs=1e-7)


def test_half_point_slope_values():
    assert bd.half_point_slope(1.0) == 0.0
    # oracle: central difference of f at 1/2 for eta = 2, frozen
    assert bd.half_point_slope(2.0) == pytest.approx(-0.070651, abs=5e-7)
    f, *_ = bd.round2_functions(2.0)
    assert derivative(f, 0.5, 1e-5) == pytest.approx(-0.070651, abs=5e-7)


@given(st.floats(0.05, 0.95), st.floats(0.1, 3.0))
def test_round2_derivatives(p, eta):
    f, g, fp, gp = bd.round2_functions(eta)
    h = 1e-6 * min(p, 1 - p)
    assert (f(p + h) - f(p - h)) / (2 * h) == pytest.approx(fp(p), rel=1e-5, abs=1e-7)
    assert (g(p + h) - g(p - h)) / (2 * h) == pytest.approx(gp(p), rel=1e-5, abs=1e-7)


def test_round2_domain():
    with pytest.raises(DomainError):
        bd.round2_functions(0.0)
    f, *_ = bd.round2_functions(1.0)
    with pytest.raises(DomainError):
        f(1.0)


def _G(cfg, p):
    f, g, *_ = bd.round2_functions(cfg.etas[1])
    return p * (cfg.mu1 * f(p) + (1 - cfg.mu1) * p) + (1 - p) * (cfg.mu0 * g(p) + (1 - cfg.mu0) * p)


def test_psi_equals_G_of_intermediate_policy():
    system = bd.bandit_system(HALF).system
    for eps in (-0.5, 0.0, 0.3, 1.0):
        assert targets.psi(system, 1, eps, (3,)) == pytest.approx(_G(HALF, bd.intermediate_policy(HALF, eps)),
                                                                  abs=1e-14)
    assert bd.enumerated_targets(HALF)[0] == pytest.approx(
        bd.intermediate_sensitivity(HALF) * derivative(lambda p: _G(HALF, p), 0.5, 1e-5), abs=1e-8)


@given(st.floats(0.1, 0.9), st.floats(0.05, 1.0), st.floats(0.1, 3.0), st.floats(0.0, 1.0), st.floats(0.05, 1.0))
def test_closed_forms_match_enumeration(q, eta1, eta2, mu0, mu1):
    cfg = bd.BanditConfig(q, (eta1, eta2), mu0, mu1)
    cf = bd.two_step_targets(cfg)
    system = bd.bandit_system(cfg).system
    assert abs(cf.interventional - targets.interventional_influence(system, 1, (3,))) <= 1e-10
    assert abs(cf.replay - targets.conditional_expected_replay(system, 1, (3,))) <= 1e-10


def test_half_point_lemma_forms():
    cf = bd.two_step_targets(HALF)
    assert cf.half_point["R"] == pytest.approx(cf.R, abs=1e-12)
    assert cf.half_point["G_prime"] == pytest.approx(cf.G_prime, abs=1e-12)
    # values frozen from the closed forms at mu0 = 0.95, eta2 = 2
    assert cf.R == pytest.approx(-0.0439, abs=5e-5)
    assert cf.G_prime == pytest.approx(0.896, abs=5e-4)


@pytest.mark.parametrize("eta2", [0.5, 1.0, 2.0, 4.0])
def test_mu0_one_intervention_factor(eta2):
    cfg = bd.BanditConfig(0.25, (bd.LOG3_OVER_4, eta2), 1.0, 1.0)
    expected = math.tanh(eta2) - (eta2 - 1) / math.cosh(eta2) ** 2
    assert bd.two_step_targets(cfg).G_prime == pytest.approx(expected, abs=1e-12)


def test_mu0_one_factor_minimum_at_one():
    grid = np.linspace(0.2, 4.0, 3801)
    vals = [math.tanh(e) - (e - 1) / math.cosh(e) ** 2 for e in grid]
    assert grid[int(np.argmin(vals))] == pytest.approx(1.0, abs=1e-3)
    assert min(vals) == pytest.approx(math.tanh(1.0), abs=1e-9)


def test_vanishing_round2_rate_closes_gap():
    cfg = bd.BanditConfig(0.25, (bd.LOG3_OVER_4, 1e-6), 0.7, 0.7)
    cf = bd.two_step_targets(cfg)
    assert abs(cf.interventional - cf.replay) <= 1e-5


def test_separation_at_reference_point():
    rows = bd.separation_search([2.0], [0.95])
    assert len(rows) == 1
    r = rows[0]
    assert r.replay < 0 < r.intervention and r.replay_enumerated < 0 < r.intervention_enumerated
    assert r.witness is not None and r.witness.replay_influence < 0


def test_separation_threshold():
    mu_star = bd.replay_threshold(2.0)
    # oracle: bisection on the enumerated conditional expected replay
    lo, hi = 0.5, 0.99
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        rep = bd.enumerated_targets(bd.BanditConfig(0.25, (bd.LOG3_OVER_4, 2.0), mid, 1.0))[1]
        lo, hi = (lo, mid) if rep < 0 else (mid, hi)
    assert mu_star == pytest.approx(lo, abs=1e-9)
    assert mu_star == pytest.approx(0.868, abs=5e-4)
    assert not bd.separation_search([2.0], [0.85, 0.86])
    assert bd.separation_search([2.0], [0.87, 0.9])


def test_no_separation_for_small_eta2():
    assert not bd.separation_search([0.5, 1.0], np.round(np.arange(0.9, 0.995, 0.01), 2))


def test_default_grid_has_reference_row():
    rows = bd.separation_table()
    assert len(rows) == 30
    assert any(abs(r.mu0 - 0.95) < 1e-12 and r.eta2 == 2.0 and r.separated for r in rows)


def test_sign_flip_convex_combination():
    system = bd.bandit_system(HALF).system
    flip = bd.realized_sign_flip(HALF)
    assert flip is not None and flip.interventional > 0
    assert flip.payload[0][1:] in {(1, 1), (0, 1)}
    terms = [b.baseline * targets.replay_influence(system, 1, (3,) + b.continuation)
             for b in future_branches(system, 1, 0.0, (3,))]
    assert abs(math.fsum(terms) - targets.conditional_expected_replay(system, 1, (3,))) <= 1e-12


def test_sign_flip_absent_without_positive_intervention(coin):
    from adaptive_attribution.gallery import insufficiency_family
    assert bd.sign_flip_witness(coin, 1, (0,)) is None
    assert bd.sign_flip_witness(insufficiency_family(-1.0), 1, (0,)) is None


def test_sign_flip_frozen_kernel_variant():
    # policy frozen at 1/2: recollection cannot differ from replay, so no flip is guaranteed
    base = bd.bandit_system(HALF)
    frozen = ActionOnlySystem([(1, 2, 2)] * 2, base.system.theta1,
                              [(u.value, u.jac_theta, u.jac_w) for u in _payload_updates(base)],
                              lambda th, s, x: np.array([0.5, 0.5]), lambda th, s, x: np.zeros((2, 1)),
                              lambda s, h: np.ones(1), lambda s, x, a, h: np.array([1 - (0.95, 1.0)[a], (0.95, 1.0)[a]]),
                              base.system.evaluation)
    flip = bd.sign_flip_witness(frozen.system, 1, (3,))
    rep = targets.conditional_expected_replay(frozen.system, 1, (3,))
    assert targets.interventional_influence(frozen.system, 1, (3,)) == pytest.approx(rep, abs=1e-14)
    assert flip is None or flip.replay_influence < 0


def _payload_updates(aos):
    from adaptive_attribution.model import UpdateMap
    space = aos.system.space
    out = []
    for s, u in enumerate(aos.system.updates, start=1):
        out.append(UpdateMap(lambda th, z, w, u=u, s=s: u.value(th, space.encode(s, z), w),
                             lambda th, z, w, u=u, s=s: u.jac_theta(th, space.encode(s, z), w),
                             lambda th, z, w, u=u, s=s: u.jac_w(th, space.encode(s, z), w)))
    return out


STABLE = [
    bd.BanditConfig(0.5, (0.05, 0.05, 0.05), 0.7, 0.4),
    bd.BanditConfig(0.45, (0.1, 0.05, 0.08), 0.2, 0.9),
    bd.BanditConfig(0.55, (0.08, 0.08), 0.5, 0.5),
    bd.BanditConfig(0.5, (0.02, 0.04, 0.03, 0.05), 0.0, 1.0),
]


@pytest.mark.parametrize("cfg", STABLE)
def test_stability_bound_and_halving(cfg):
    res = bd.stability_gap_check(cfg, 0.3)
    assert res.holds and res.gap <= res.bound
    assert 2.0 <= bd.halving_ratio(cfg, 0.3) <= 8.0


def test_stability_later_round_and_custom_F():
    cfg = bd.BanditConfig(0.5, (0.05, 0.06, 0.04), 0.3, 0.8, F=lambda p: p ** 2, F_prime=lambda p: 2 * p)
    res = bd.stability_gap_check(cfg, 0.3, t=2, prefix=(3, 1))
    assert res.L_F == pytest.approx(1.4, abs=1e-12)
    assert res.holds


def test_zero_rate_gives_zero_gap():
    cfg = bd.BanditConfig(0.5, (0.0, 0.05, 0.05), 0.7, 0.4)
    res = bd.stability_gap_check(cfg, 0.3)
    assert res.gap == 0.0 and res.bound == 0.0


def test_regime_violation_reports_path():
    with pytest.raises(RegimeError):
        bd.stability_gap_check(bd.BanditConfig(0.5, (0.5, 0.5), 0.5, 0.5), 0.3)
    with pytest.raises(RegimeError) as exc:
        bd.stability_gap_check(bd.BanditConfig(0.32, (0.4, 0.4, 0.4), 0.5, 0.5), 0.3)
    assert exc.value.path is not None


def test_config_validation():
    with pytest.raises(DomainError):
        bd.BanditConfig(0.0, (0.1,), 0.5, 0.5)
    with pytest.raises(DomainError):
        bd.BanditConfig(0.5, (0.1,), 1.5, 0.5)
    with pytest.raises(DomainError):
        bd.BanditConfig(0.5, (0.1,), 0.5, 0.5, F=lambda p: p)
    with pytest.raises(DomainError):
        bd.two_step_targets(bd.BanditConfig(0.5, (0.1, 0.1, 0.1), 0.5, 0.5))


def test_reference_point_values():
    # frozen from an independent closed-form evaluation at mu0 = 0.95, eta2 = 2
    cf = bd.two_step_targets(HALF)
    assert cf.interventional == pytest.approx(0.24610078, abs=1e-8)
    assert cf.replay == pytest.approx(-0.01205303, abs=1e-8)
    assert bd.replay_threshold(2.0) == pytest.approx(0.868022658, abs=1e-8)

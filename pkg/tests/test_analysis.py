import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pairsim.analysis import (bianchi_fixed_point, channel_collision_prob, cost_metrics,
                              false_positive_ratio, minimal_m, solve_markov_bruteforce,
                              stationary_alarm_prob, tau_given_p, transition_matrix)
from pairsim.mac import MacParams


def exact_pi(p: Fraction, m: int) -> Fraction:
    return (p ** m - p ** (m + 1)) / (1 - p ** (m + 1))


def test_known_alarm_probabilities():
    assert exact_pi(Fraction(1, 4), 4) == Fraction(3, 1023)
    assert stationary_alarm_prob(0.25, 4) == pytest.approx(3 / 1023, rel=1e-14)
    assert stationary_alarm_prob(0.25, 4) == pytest.approx(2.9326e-3, abs=1e-7)


def test_expected_false_alarms_grid_point():
    exact = 4000 * exact_pi(Fraction(1, 4), 10)
    assert false_positive_ratio(4000, 0.25, 10) == pytest.approx(float(exact), rel=1e-13)
    assert false_positive_ratio(4000, 0.25, 10) == pytest.approx(2.861e-3, abs=1e-6)


def test_case_study_expected_false_alarms():
    p = Fraction(71, 2065)
    for m, value in ((4, 1.394e-3), (5, 4.79e-5)):
        exact = float(1033 * exact_pi(p, m))
        assert false_positive_ratio(1033, 71 / 2065, m) == pytest.approx(exact, rel=1e-12)
        assert exact == pytest.approx(value, rel=2e-3)


@given(st.floats(0.0, 0.95), st.integers(1, 15))
def test_closed_form_matches_linear_solve(p, m):
    pi = solve_markov_bruteforce(p, m).stationary
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)
    assert abs(pi[-1] - stationary_alarm_prob(p, m)) <= 1e-12


@given(st.floats(0.0, 0.95), st.integers(1, 10))
def test_transition_matrix_is_stochastic(p, m):
    P = transition_matrix(p, m)
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.all(P >= 0)


@given(st.floats(0.01, 0.9), st.integers(1, 10))
def test_alarm_probability_decreases_in_m(p, m):
    assert stationary_alarm_prob(p, m + 1) < stationary_alarm_prob(p, m)


@pytest.mark.parametrize("bad", [-0.1, 1.0, 1.5])
def test_probability_domain(bad):
    with pytest.raises(ValueError):
        stationary_alarm_prob(bad, 3)


def test_false_positive_ratio_can_exceed_one():
    assert false_positive_ratio(10_000, 0.5, 1) > 1.0
    with pytest.raises(ValueError):
        false_positive_ratio(-1, 0.1, 3)


@given(st.integers(100, 5000), st.floats(0.01, 0.4), st.floats(1e-4, 0.1))
def test_minimal_m_is_the_first_m_meeting_target(k, p, target):
    m = minimal_m(k, p, target)
    assert false_positive_ratio(k, p, m) <= target
    if m > 1:
        assert false_positive_ratio(k, p, m - 1) > target


def test_minimal_m_domain():
    with pytest.raises(ValueError):
        minimal_m(1000, 1.0, 0.01)
    with pytest.raises(ValueError):
        minimal_m(1000, 0.1, 0.0)


def enumerated_collision_prob(n, tau):
    busy = coll = 0.0
    for pattern in itertools.product((0, 1), repeat=n):
        k = sum(pattern)
        w = tau ** k * (1 - tau) ** (n - k)
        if k >= 1:
            busy += w
        if k >= 2:
            coll += w
    return coll / busy if busy else 0.0


def test_collision_prob_known_values():
    assert channel_collision_prob(2, 0.5) == 1 / 3
    assert channel_collision_prob(1, 0.3) == 0.0
    assert channel_collision_prob(5, 0.0) == 0.0
    assert channel_collision_prob(5, 1.0) == 1.0


@given(st.integers(1, 6), st.floats(0.001, 0.999))
def test_collision_prob_matches_enumeration(n, tau):
    assert abs(channel_collision_prob(n, tau) - enumerated_collision_prob(n, tau)) <= 1e-12


def test_collision_prob_domain():
    with pytest.raises(ValueError):
        channel_collision_prob(0, 0.1)
    with pytest.raises(ValueError):
        channel_collision_prob(3, 1.1)


def classic_tau(p, W, stages):
    # saturated model with no retry limit and `stages` window doublings
    return 2 * (1 - 2 * p) / ((1 - 2 * p) * (W + 1) + p * W * (1 - (2 * p) ** stages))


@given(st.floats(0.0, 0.45))
def test_tau_reduces_to_classic_model_without_retry_limit(p):
    params = MacParams(retry_limit=400)
    assert tau_given_p(p, params) == pytest.approx(classic_tau(p, 32, 6), rel=1e-9)


def iterate_fixed_point(n, params, steps=20_000):
    tau = 0.05
    for _ in range(steps):
        p = 1 - (1 - tau) ** (n - 1)
        tau = 0.9 * tau + 0.1 * tau_given_p(p, params)
    return tau, p


@pytest.mark.parametrize("n", [2, 5, 10, 20, 30])
def test_fixed_point_matches_damped_iteration(n):
    op = bianchi_fixed_point(n)
    tau, p = iterate_fixed_point(n, MacParams())
    assert op.tau == pytest.approx(tau, rel=1e-8)
    assert op.p_cond == pytest.approx(p, rel=1e-8)
    assert op.p_ch == channel_collision_prob(n, op.tau)
    assert op.residual <= 1e-10


def test_fixed_point_trends():
    ops = [bianchi_fixed_point(n) for n in range(1, 31)]
    assert ops[0].p_ch == 0.0 and ops[0].tau == pytest.approx(2 / 33)
    assert all(a.p_ch < b.p_ch for a, b in zip(ops[1:], ops[2:]))
    assert all(a.tau > b.tau for a, b in zip(ops[1:], ops[2:]))
    with pytest.raises(ValueError):
        bianchi_fixed_point(0)


def test_cost_metrics():
    c = cost_metrics(6, 1.5)
    assert (c.extra_messages, c.key_delay) == (10, 1.5)
    with pytest.raises(ValueError):
        cost_metrics(0, 1.5)

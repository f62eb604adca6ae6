from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from liftedmac import bounds, gkernel
from liftedmac.bounds import LogQuantity
from liftedmac.config import CouplingSpec
from liftedmac.coupled import coupled_step_window, init_profile
from liftedmac.errors import DomainError, NumericFailureError, PreconditionError, RangeError


@pytest.mark.parametrize("alpha,expected", [(math.e, 35 * math.e), (3.0, 45 * math.log(3) + 60),
                                            (2.5, 37.5 * math.log(2.5) + 50)])
def test_min_window_values(alpha, expected):
    assert bounds.min_window(alpha).log_value == pytest.approx(expected, rel=1e-14)


def test_min_window_rounded_landmarks():
    assert bounds.min_window(math.e).log_value == pytest.approx(95.14, abs=0.005)
    assert bounds.min_window(3.0).log_value == pytest.approx(109.44, abs=0.005)
    assert bounds.min_window(2.5).log_value == pytest.approx(84.36, abs=0.005)


def test_min_window_domain():
    with pytest.raises(DomainError):
        bounds.min_window(2.0)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_log_quantity_arithmetic(a, b):
    x, y = LogQuantity(a), LogQuantity(b)
    assert (x * y).log_value == pytest.approx(a + b)
    assert (x / y).log_value == pytest.approx(a - b)
    assert (x + y).log_value == pytest.approx(math.log(math.exp(a) + math.exp(b)), rel=1e-12, abs=1e-12)
    assert (x ** 3).log_value == pytest.approx(3 * a)


def test_log_quantity_range_and_domain():
    with pytest.raises(RangeError):
        LogQuantity(1000.0).value
    with pytest.raises(DomainError):
        LogQuantity.of(-1.0)


@pytest.mark.parametrize("W,alpha", [(10.0, 3.0), (1e3, 2.5), (1e6, 4.0), (0.5, 1.0)])
def test_epsilon_log_vs_direct(W, alpha):
    assert bounds.epsilon(W, alpha).value == pytest.approx(bounds.epsilon_direct(W, alpha), rel=1e-10)


def test_log_two_w_plus_one_small_and_large():
    assert bounds.log_two_w_plus_one(math.log(10.0)) == pytest.approx(math.log(21.0), rel=1e-15)
    assert bounds.log_two_w_plus_one(500.0) == pytest.approx(500.0 + math.log(2.0), rel=1e-15)


def test_epsilon_decreases_with_window():
    vals = [bounds.epsilon(LogQuantity(lw), 3.0).log_value for lw in np.linspace(0, 300, 80)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_epsilon_overflow_is_explicit():
    with pytest.raises(RangeError):
        bounds.epsilon(LogQuantity(5000.0), 1.0)


def test_epsilon_crit_residual_and_bracket():
    e = bounds.epsilon_crit(2.0)
    assert abs(math.exp(-1 / (4 * e)) - e / 2) <= 1e-12
    f = lambda x: math.exp(-1 / (4 * x)) - x / 2
    assert f(0.9 * e) < 0 and f(1e-3) < 0 and f(1.1 * e) > 0


def test_epsilon_crit_missing_root():
    with pytest.raises(NumericFailureError):
        bounds.epsilon_crit(0.5)


def test_epsilon_at_min_window_is_below_crit():
    assert bounds.epsilon(bounds.min_window(3.0), 3.0).value < bounds.epsilon_crit(3.0)


@pytest.mark.parametrize("alpha", [2.5, 3.0, 4.0, 5.0])
def test_bound_chain_holds_at_min_window(alpha):
    rep = bounds.check_lemma1(alpha, bounds.min_window(alpha))
    assert rep.passed, rep.failed()
    for name in ("eps_below_inverse_2w", "eps_below_power", "halving_condition", "halving_g_bound",
                 "halving_strict", "closure_g_below_eps"):
        assert rep.get(name).holds
    d = rep.to_dict()
    assert all("log_lhs" in c and "log_rhs" in c for c in d["checks"])


def test_bound_chain_fails_for_small_window():
    rep = bounds.check_lemma1(3.0, 10.0)
    assert not rep.passed
    assert "eps_below_inverse_2w" in rep.failed()
    assert math.exp(rep.log_eps) == pytest.approx(3.036, abs=1e-3)


def test_halving_step_direct_and_precondition():
    e = bounds.epsilon_crit(2.0)
    assert bounds.check_lemma2(2.0, e / 10).passed
    with pytest.raises(PreconditionError):
        bounds.check_lemma2(2.0, 2 * e)


def test_halving_on_profile():
    # Every x below alpha*eps and y below eps: one step at least halves the bulk variances.
    alpha, W, T = 3.0, 2, 60
    eps = 0.5 * bounds.epsilon_crit(alpha)
    rng = np.random.default_rng(0)
    p = init_profile(T, alpha, 0.0, W)
    p.x[:] = rng.uniform(0.2, 0.99, T) * alpha * eps
    q = coupled_step_window(p, alpha, 0.0, W)
    bulk = slice(0, T - 2 * W)
    assert np.all(q.x[bulk] < alpha * eps / 2)
    assert np.all(q.y[bulk] < eps / 2)


def test_g_bound_used_beyond_direct_range():
    lg, how = bounds.log_g_bounded(math.log(1e5))
    assert how == "analytic bound" and lg <= -0.5e5
    lg, how = bounds.log_g_bounded(math.log(3.0))
    assert how == "direct" and lg == pytest.approx(math.log(gkernel.g(3.0)))


def test_decay_simulation_cases():
    fast = bounds.decay_simulation(1.0, 1)
    assert fast.decayed and fast.max_ratio < 0.1
    mid = bounds.decay_simulation(3.0, 5)
    assert mid.decayed and mid.max_ratio <= 0.5
    stuck = bounds.decay_simulation(5.0, 1, iters=2000)
    assert not stuck.decayed

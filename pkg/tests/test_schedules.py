import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from rex.schedules import (
    OVERFLOW_T,
    ClockRangeError,
    ClockSingularityError,
    NoiseSchedule,
    TimeGrid,
    weight_from_clock,
)

LIN = NoiseSchedule("linear", 0.1, 20.0)
SL = NoiseSchedule("scaled_linear", 0.85, 12.0)
SCHEDULES = {
    "linear_default": NoiseSchedule.linear(),
    "linear_ddpm": NoiseSchedule.linear(beta_hat1=0.02),
    "scaled_linear": NoiseSchedule.scaled_linear(),
}
CLOCKS = ("gamma", "rho", "chi")
times = st.floats(min_value=1e-4, max_value=1.0)


def test_factory_constants():
    lin = NoiseSchedule.linear()
    assert (lin.beta0, lin.beta1) == pytest.approx((0.1, 200.0))
    sl = NoiseSchedule.scaled_linear()
    assert (sl.beta0, sl.beta1) == pytest.approx((0.85, 12.0))


def test_alpha_endpoints():
    assert LIN.alpha(0.0) == 1.0
    assert SL.alpha(0.0) == 1.0
    assert LIN.alpha(1.0) == pytest.approx(math.exp(-5.025), rel=1e-15)


def test_sigma_values():
    assert LIN.sigma(0.0) == 0.0
    assert LIN.sigma(1.0) == pytest.approx(math.sqrt(1.0 - math.exp(-10.05)), rel=1e-15)
    assert LIN.sigma(0.37) ** 2 + LIN.alpha(0.37) ** 2 == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("name", sorted(SCHEDULES))
def test_alpha_sigma_match_oracle(name):
    sch = SCHEDULES[name]
    for t in (1e-4, 0.01, 0.3, 0.77, 1.0):
        a = oracles.alpha(sch.kind.value, sch.beta0, sch.beta1, t)
        s = oracles.sigma(sch.kind.value, sch.beta0, sch.beta1, t)
        assert sch.alpha(t) == pytest.approx(float(a), rel=1e-14)
        assert sch.sigma(t) == pytest.approx(float(s), rel=1e-14)


# Frozen from tests/oracles.py (clock(kind, t) at 60 digits).
FROZEN_CLOCKS = {
    ("linear_default", "gamma", 2e-4): 204.13142624364501432,
    ("linear_default", "chi", 0.3): 91.166713331996020613,
    ("linear_default", "rho", 1.0): 3.5386457297692317513e-44,
    ("linear_default", "lambda", 1.0): -50.025000000000000001,
    ("scaled_linear", "gamma", 2e-4): 76.672095389850145486,
    ("scaled_linear", "rho", 0.3): 1.4515107389573222912,
    ("scaled_linear", "chi", 1.0): 14.46269542245834256,
    ("scaled_linear", "lambda", 0.3): 0.18630245148949845404,
}


@pytest.mark.parametrize("key", sorted(FROZEN_CLOCKS))
def test_clock_frozen_values(key):
    name, kind, t = key
    assert SCHEDULES[name].clock(kind, t) == pytest.approx(FROZEN_CLOCKS[key], rel=1e-13)


@given(t=times)
def test_clock_identities(t):
    g = LIN.clock("gamma", t)
    assert LIN.clock("rho", t) == pytest.approx(g * g, rel=1e-14)
    assert LIN.clock("chi", t) * g == pytest.approx(1.0, rel=1e-14)
    assert LIN.clock("lambda", t) == pytest.approx(math.log(g), rel=1e-13, abs=1e-13)


def test_clock_singularity_and_overflow():
    with pytest.raises(ClockSingularityError):
        LIN.clock("gamma", 0.0)
    assert LIN.clock("chi", 0.0) == 0.0
    assert math.isinf(LIN.clock("gamma", OVERFLOW_T / 10))
    assert math.isinf(LIN.clock("rho", np.array([OVERFLOW_T / 10]))[0])


def test_clock_rejects_outside_unit_interval():
    with pytest.raises(ValueError):
        LIN.alpha(1.5)
    with pytest.raises(ValueError):
        LIN.clock("gamma", -0.1)


@pytest.mark.parametrize("name", sorted(SCHEDULES))
@pytest.mark.parametrize("kind", CLOCKS)
def test_inverse_round_trip_on_grid(name, kind):
    sch = SCHEDULES[name]
    t = np.concatenate([[sch.eps], np.geomspace(sch.eps, 1.0, 400), [1.0]])
    v = np.asarray(sch.clock(kind, t))
    back = np.asarray(sch.inverse_clock(kind, v))
    again = np.asarray(sch.clock(kind, back))
    assert np.max(np.abs(again / v - 1.0)) < 1e-9
    assert np.max(np.abs(back / t - 1.0)) < 1e-9


@pytest.mark.parametrize("name", sorted(SCHEDULES))
@pytest.mark.parametrize("kind", CLOCKS)
def test_inverse_matches_bisection_oracle(name, kind):
    sch = SCHEDULES[name]
    for t in (3e-4, 0.05, 0.5, 0.95):
        v = float(sch.clock(kind, t))
        ref = oracles.inverse_clock(sch.kind.value, sch.beta0, sch.beta1, kind, v)
        assert sch.inverse_clock(kind, v) == pytest.approx(float(ref), rel=1e-10)


@given(t=times)
def test_scalar_and_array_paths_agree(t):
    for kind in CLOCKS + ("lambda",):
        # math and numpy's vectorised libm may differ in the last bit.
        expected = np.asarray(LIN.clock(kind, np.array([t])))[0]
        assert LIN.clock(kind, t) == pytest.approx(expected, rel=5e-16, abs=1e-300)
    for kind in CLOCKS:
        v = LIN.clock(kind, max(t, LIN.eps))
        expected = np.asarray(LIN.inverse_clock(kind, np.array([v])))[0]
        assert LIN.inverse_clock(kind, v) == pytest.approx(expected, rel=1e-15)


def test_inverse_specific_points():
    assert LIN.inverse_clock("gamma", LIN.clock("gamma", 0.5)) == pytest.approx(0.5, rel=1e-9)
    assert LIN.inverse_clock("rho", LIN.clock("rho", LIN.eps)) == pytest.approx(LIN.eps, rel=1e-9)
    x = 3.7
    assert LIN.inverse_clock("chi", x) == pytest.approx(LIN.inverse_clock("gamma", 1.0 / x), rel=1e-12)


def test_inverse_lambda():
    for t in (1e-3, 0.4, 1.0):
        lam = SL.clock("lambda", t)
        assert SL.inverse_clock("lambda", lam) == pytest.approx(t, rel=1e-9)


def test_inverse_strict_range():
    lo, hi = LIN.clock_range("gamma")
    with pytest.raises(ClockRangeError):
        LIN.inverse_clock("gamma", hi * 2.0)
    with pytest.raises(ClockRangeError):
        LIN.inverse_clock("gamma", -1.0)
    assert LIN.inverse_clock("gamma", hi * 2.0, strict=False) < LIN.eps


def test_weight_from_clock():
    assert weight_from_clock("gamma", "data", 0.0) == 1.0
    assert weight_from_clock("gamma", "data", math.sqrt(3.0)) == pytest.approx(0.5, rel=1e-15)
    assert weight_from_clock("chi", "noise", 1.0) == pytest.approx(1.0 / math.sqrt(2.0), rel=1e-15)
    with pytest.raises(ValueError):
        weight_from_clock("rho", "noise", 1.0)


@given(t=times)
def test_weights_equal_schedule_quantities(t):
    t = max(t, LIN.eps)
    sigma, alpha = LIN.sigma(t), LIN.alpha(t)
    gamma = LIN.clock("gamma", t)
    assert weight_from_clock("gamma", "data", LIN.clock("gamma", t)) == pytest.approx(sigma, rel=1e-13)
    assert weight_from_clock("rho", "data", LIN.clock("rho", t)) == pytest.approx(sigma / gamma, rel=1e-13)
    assert weight_from_clock("chi", "noise", LIN.clock("chi", t)) == pytest.approx(alpha, rel=1e-13)


def test_time_grid_uniform_and_subsample():
    grid = TimeGrid.uniform(SL, 8, "gamma")
    assert grid.t_values[0] == 1.0 and grid.t_values[-1] == SL.eps
    assert np.all(np.diff(grid.values) > 0)
    coarse = grid.subsample(4)
    assert coarse.n_steps == 2
    np.testing.assert_array_equal(coarse.values, grid.values[::4])
    with pytest.raises(ValueError):
        grid.subsample(3)
    with pytest.raises(ValueError):
        TimeGrid("gamma", np.array([0.5, 0.7]), np.array([1.0, 2.0]))


def test_schedule_validation():
    with pytest.raises(ValueError):
        NoiseSchedule("linear", 1.0, 0.5)
    with pytest.raises(ValueError):
        NoiseSchedule("linear", 0.1, 20.0, eps=0.0)
    with pytest.raises(ValueError):
        NoiseSchedule.from_name("cosine")

"""Simulation harness tests: closed-form agreement, path consistency, CRN."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from forecastmdp import energy, simulate
from forecastmdp.lqg import DiscountedLqr, InstabilityError, riccati_solve
from forecastmdp.mmfe import (
    DisturbanceSchedule,
    ForecastVector,
    FreshNoise,
    MmfeModel,
    forecast_vector,
    roll_forecast_vector,
)
from forecastmdp.simulate import (
    FixedStart,
    SimConfig,
    StationaryStart,
    simulate_discounted_cost,
    simulate_forecast_system_cost,
    simulate_improvement_paired,
    simulate_mmfe_joint_path,
    simulate_no_forecast_system_cost,
)

DEFAULTS = energy.EnergyParams()


def test_config_defaults_and_validation():
    cfg = SimConfig(replications=10, discount=0.9)
    assert cfg.horizon_periods == math.ceil(math.log(1e-8) / math.log(0.9))
    with pytest.raises(ValueError):
        SimConfig(replications=0, discount=0.9)
    with pytest.raises(ValueError):
        SimConfig(replications=10, discount=1.0)


def test_zero_everything_costs_zero():
    prob = DiscountedLqr(
        np.array([[0.7, 0.1], [0.0, 0.5]]),
        np.array([[0.0], [1.0]]),
        np.array([[2.0, 0.1], [0.1, 1.0]]),
        np.array([[1.0]]),
        0.9,
        np.zeros((2, 2)),
    )
    cfg = SimConfig(replications=5, discount=0.9, seed=1)
    est = simulate_discounted_cost(prob, np.zeros((1, 2)), cfg, FixedStart(np.zeros(2)))
    assert est.mean == 0.0 and est.std_error == 0.0


def test_estimates_reproducible_bit_for_bit():
    p = DEFAULTS
    sol = riccati_solve(energy.build_no_forecast(p).lqr)
    cfg = SimConfig(replications=2000, discount=p.alpha, seed=99)
    a = simulate_no_forecast_system_cost(p, sol.gain, cfg)
    b = simulate_no_forecast_system_cost(p, sol.gain, cfg)
    assert a.mean == b.mean and a.std_error == b.std_error


def test_stationary_start_reproduces_moments():
    bundle = energy.build_dynamic_forecast(DEFAULTS)
    start = StationaryStart(bundle.initial_second_moment, {4: bundle.constant_coord})
    gen = np.random.default_rng(3)
    draws = start.sample(gen, 200_000)
    emp = draws.T @ draws / draws.shape[0]
    m = bundle.initial_second_moment
    scale = np.sqrt(np.outer(np.diag(m), np.diag(m))) + 1e-9
    assert np.max(np.abs(emp[:4, :4] - m[:4, :4]) / scale[:4, :4]) < 0.02
    assert np.all(draws[:, 4] == bundle.constant_coord)


def test_value_matches_simulation_from_fixed_state():
    # optimal value at a specific state vs Monte Carlo from that same state
    p = DEFAULTS
    bundle = energy.build_no_forecast(p)
    sol = riccati_solve(bundle.lqr)
    from forecastmdp.lqg import value_at

    z = np.array([1.3, -0.8, bundle.constant_coord])
    cfg = SimConfig(replications=60_000, discount=p.alpha, seed=5)
    est = simulate_discounted_cost(bundle.lqr, sol.gain, cfg, FixedStart(z))
    assert abs(est.mean - value_at(sol, z)) < 3.0 * est.std_error


def test_no_forecast_cost_matches_closed_form():
    p = DEFAULTS
    sol = riccati_solve(energy.build_no_forecast(p).lqr)
    closed = energy.expected_cost_no_forecast(p, sol)
    cfg = SimConfig(replications=30_000, discount=p.alpha, seed=11)
    est = simulate_no_forecast_system_cost(p, sol.gain, cfg)
    assert abs(est.mean - closed) < 3.0 * est.std_error
    assert est.truncation_bias_bound < 1e-3


def test_forecast_cost_matches_closed_form():
    p = DEFAULTS
    sol = riccati_solve(energy.build_dynamic_forecast(p).lqr)
    closed = energy.expected_cost_forecast(p, sol)
    cfg = SimConfig(replications=30_000, discount=p.alpha, seed=13)
    est = simulate_forecast_system_cost(p, sol.gain, cfg)
    assert abs(est.mean - closed) < 3.0 * est.std_error


def test_forecast_step_update_equals_roll():
    # the vectorized 5-state update must be the forecast roll in disguise
    p = DEFAULTS
    model = MmfeModel.scalar(p.g, DisturbanceSchedule(p.sigma2, p.gamma, 0.0, 8))
    gen = np.random.default_rng(7)
    w, f1, f2 = gen.normal(size=3)
    e0, e1, e2, agg = gen.normal(size=4)
    g = p.g
    # simulator's update arithmetic
    w_next = f1 + e0
    f1_next = f2 + e1 + g * e0
    f2_next = g * f2 + agg + e2 + g * e1 + g * g * e0
    got_w, rolled = roll_forecast_vector(
        model,
        ForecastVector(0, np.array([f1, f2])),
        FreshNoise(np.array([[e0], [e1], [e2]]), np.array([agg])),
    )
    assert_allclose([got_w], [w_next], rtol=0, atol=0)
    assert_allclose(rolled.flat(), [f1_next, f2_next], rtol=0, atol=1e-15)
    # indoor recursion: -rho w + f1 + rho x + a + e0 + v is the mean-reverting
    # form (g-rho) w + rho x + z + v + a with z = w_next - g w
    x, a, v = gen.normal(size=3)
    lhs = -p.rho * w + f1 + p.rho * x + a + e0 + v
    rhs = (g - p.rho) * w + p.rho * x + (w_next - g * w) + v + a
    assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_paired_estimator_agrees_and_sharpens():
    p = DEFAULTS
    sol_n = riccati_solve(energy.build_no_forecast(p).lqr)
    sol_f = riccati_solve(energy.build_dynamic_forecast(p).lqr)
    closed_gap = energy.expected_cost_no_forecast(p, sol_n) - energy.expected_cost_forecast(
        p, sol_f
    )
    cfg = SimConfig(replications=20_000, discount=p.alpha, seed=29)
    pe = simulate_improvement_paired(p, sol_n.gain, sol_f.gain, cfg)
    assert abs(pe.diff_mean - closed_gap) < 3.0 * pe.diff_std_error
    # common random numbers make the paired difference far sharper than the
    # difference of independent estimates would be
    assert pe.diff_std_error < 0.2 * pe.no_forecast.std_error
    for est, closed in (
        (pe.no_forecast, energy.expected_cost_no_forecast(p, sol_n)),
        (pe.forecast, energy.expected_cost_forecast(p, sol_f)),
    ):
        assert abs(est.mean - closed) < 4.0 * est.std_error


def test_gain_perturbation_never_beats_optimum():
    p = DEFAULTS
    bundle = energy.build_no_forecast(p)
    sol = riccati_solve(bundle.lqr)
    cfg = SimConfig(replications=20_000, discount=p.alpha, seed=31)
    base = simulate_no_forecast_system_cost(p, sol.gain, cfg)
    gen = np.random.default_rng(2)
    for _ in range(4):
        delta = gen.normal(size=sol.gain.shape)
        delta *= 0.05 / np.linalg.norm(delta)
        worse = simulate_no_forecast_system_cost(p, sol.gain + delta, cfg)
        # same seed => common random numbers; paired comparison is sharp
        assert worse.mean > base.mean


def test_forecast_gain_perturbation_never_beats_optimum():
    p = DEFAULTS
    sol = riccati_solve(energy.build_dynamic_forecast(p).lqr)
    cfg = SimConfig(replications=15_000, discount=p.alpha, seed=43)
    base = simulate_forecast_system_cost(p, sol.gain, cfg)
    gen = np.random.default_rng(4)
    for _ in range(3):
        delta = gen.normal(size=sol.gain.shape)
        delta *= 0.05 / np.linalg.norm(delta)
        worse = simulate_forecast_system_cost(p, sol.gain + delta, cfg)
        assert worse.mean > base.mean  # common random numbers, same seed


def test_single_entry_perturbations_only_add_cost():
    # first-order optimality: +-1e-3 bumps in any single gain entry cannot
    # reduce the (common-random-numbers) cost beyond noise
    p = DEFAULTS
    sol = riccati_solve(energy.build_no_forecast(p).lqr)
    cfg = SimConfig(replications=15_000, discount=p.alpha, seed=37)
    base = simulate_no_forecast_system_cost(p, sol.gain, cfg)
    for idx in range(3):
        for sign in (+1.0, -1.0):
            bumped = sol.gain.copy()
            bumped[0, idx] += sign * 1e-3
            est = simulate_no_forecast_system_cost(p, bumped, cfg)
            assert est.mean - base.mean > -3.0 * est.std_error


def test_instability_detector_trips():
    p = DEFAULTS
    bundle = energy.build_no_forecast(p)
    bad_gain = np.array([[0.0, -6.0, 0.0]])  # positive feedback on the indoor state
    cfg = SimConfig(replications=200, discount=p.alpha, seed=41)
    with pytest.raises(InstabilityError):
        simulate_no_forecast_system_cost(p, bad_gain, cfg)


# ---------------------------------------------------------------------------
# Joint path generation.


def test_joint_path_construction_identity():
    model = MmfeModel.scalar(0.6, DisturbanceSchedule(1.0, 0.8, 0.5, trunc_lag=12))
    weather, forecasts, eps = simulate_mmfe_joint_path(model, r=2, length=400, seed=3)
    for n in range(399):
        assert weather[n + 1] == forecasts[n, 0] + eps.entry(n + 1, n + 1)


def test_joint_path_matches_direct_forecasts():
    model = MmfeModel.scalar(0.7, DisturbanceSchedule(1.0, 0.85, 1.0, trunc_lag=10))
    weather, forecasts, eps = simulate_mmfe_joint_path(model, r=3, length=50, seed=9)
    for n in (0, 7, 31, 49):
        direct = forecast_vector(model, eps, weather[n], n, 3)
        assert_allclose(forecasts[n], direct.flat(), rtol=0, atol=1e-10)


def test_joint_path_stationary_statistics():
    # reference-configuration weather: autocorrelation decays like g^n and
    # the variance matches the stationary AR value
    p = DEFAULTS
    model = p.mmfe_model()
    n_samples = 100_000
    weather, forecasts, _ = simulate_mmfe_joint_path(model, r=1, length=n_samples, seed=7)
    w = weather - weather.mean()
    var = w.var()
    want_var = p.var_z / (1.0 - p.g**2)
    assert abs(var - want_var) / want_var < 0.01
    for lag_n in (1, 2, 5):
        corr = float(w[:-lag_n] @ w[lag_n:] / (len(w) - lag_n) / var)
        # Bartlett-style standard error for an AR(1) autocorrelation
        g2n = p.g ** (2 * lag_n)
        se = math.sqrt(
            ((1 + p.g**2) * (1 - g2n) / (1 - p.g**2) - 2 * lag_n * g2n) / n_samples
        )
        assert abs(corr - p.g**lag_n) < 3.0 * se
    # forecast rationality: the one-step error regresses to slope zero on the
    # forecast itself
    f1 = forecasts[:-1, 0]
    err = weather[1:] - f1
    fc = f1 - f1.mean()
    slope = float(fc @ err / (fc @ fc))
    slope_se = err.std(ddof=1) / math.sqrt(float(fc @ fc))
    assert abs(slope) < 3.0 * slope_se


def test_joint_path_rejects_bad_args():
    model = MmfeModel.scalar(0.6, DisturbanceSchedule(1.0, 0.8, 0.0, trunc_lag=5))
    with pytest.raises(ValueError):
        simulate_mmfe_joint_path(model, r=1, length=0, seed=1)

#!/usr/bin/env python3
"""
Tests for the price/return model and the mixture-GBM simulator.
"""

import math
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, os.path.abspath('.'))

from dprisk.errors import DimensionError, DomainError, InputError, InsufficientDataError
from dprisk.market import (
    LogReturnSeries, MixtureGbmParams, PriceSeries, compute_log_returns, fit_bs_params,
    make_price_series, martingale_pass_rate, martingale_residuals, price_paths, reconstruct_prices,
    simulate_mixture_gbm,
)


# ---------- Prices and returns ----------

def test_log_returns_of_e():
    lr = compute_log_returns(make_price_series("x", [1.0, math.e]))
    assert lr.returns.tolist() == pytest.approx([1.0], abs=1e-15)


def test_constant_prices_give_zero_returns():
    lr = compute_log_returns(make_price_series("x", [5, 5, 5]))
    assert lr.returns.tolist() == [0.0, 0.0]


def test_log_returns_arithmetic():
    lr = compute_log_returns(make_price_series("x", [100, 110, 99]))
    np.testing.assert_allclose(lr.returns, [math.log(1.1), math.log(0.9)], rtol=0, atol=1e-12)
    assert lr.returns[0] == pytest.approx(0.09531, abs=1e-5)
    assert lr.returns[1] == pytest.approx(-0.10536, abs=1e-5)
    assert len(lr) == 2


def test_returns_carry_closing_timestamps():
    ts = pd.to_datetime(["2020-01-01", "2020-01-02", "2020-01-03"]).to_numpy()
    lr = compute_log_returns(PriceSeries("x", ts, np.array([1.0, 2.0, 4.0])))
    assert list(lr.timestamps) == list(ts[1:])
    assert list(lr.to_frame().columns) == ["timestamp", "return"]


def test_price_series_rejects_bad_input():
    with pytest.raises(InputError):
        make_price_series("x", [1.0, 0.0, 2.0])
    with pytest.raises(InputError):
        make_price_series("x", [1.0, -2.0])
    with pytest.raises(InsufficientDataError):
        make_price_series("x", [1.0])
    with pytest.raises(InputError):
        make_price_series("x", [1.0, 2.0], timestamps=[3, 2])
    with pytest.raises(DimensionError):
        PriceSeries("x", np.arange(3), np.ones(2))


def test_price_round_trip():
    rng = np.random.default_rng(3)
    prices = 50 * np.exp(np.cumsum(rng.normal(0, 0.02, 300)))
    lr = compute_log_returns(make_price_series("x", prices))
    np.testing.assert_allclose(reconstruct_prices(lr), prices / prices[0], rtol=1e-12)
    np.testing.assert_allclose(reconstruct_prices(lr, s0=prices[0]), prices, rtol=1e-12)


def test_fit_bs_params_recovers_normal_moments():
    r = np.array([0.01, -0.02, 0.03, 0.0, -0.01])
    mu, sigma = fit_bs_params(r)
    assert sigma == pytest.approx(np.std(r), rel=1e-12)
    assert mu - 0.5 * sigma ** 2 == pytest.approx(np.mean(r), abs=1e-15)
    mu_y, sigma_y = fit_bs_params(LogReturnSeries("x", r), dt=1 / 252)
    assert sigma_y == pytest.approx(np.std(r) * math.sqrt(252))


# ---------- Mixture GBM ----------

def test_params_validation():
    with pytest.raises(DomainError):
        MixtureGbmParams(0.05, [0.5, 0.4], [0.1, 0.2])
    with pytest.raises(DimensionError):
        MixtureGbmParams(0.05, [0.5, 0.5], [0.1])
    with pytest.raises(DomainError):
        MixtureGbmParams(0.05, [1.0], [-0.1])
    p = MixtureGbmParams(0.05, [0.5, 0.3, 0.2], [0.1, 0.2, 0.4])
    assert p.compensated_drift == pytest.approx(0.05 - 0.5 * (0.5 * 0.01 + 0.3 * 0.04 + 0.2 * 0.16))
    assert p.variance(2.0) == pytest.approx(2.0 * (0.25 * 0.01 + 0.09 * 0.04 + 0.04 * 0.16))


def test_zero_volatility_is_deterministic_line():
    params = MixtureGbmParams(0.07, [1.0], [0.0])
    paths = simulate_mixture_gbm(params, horizon=10, n_paths=5, dt=0.5, seed=1)
    expected = 0.07 * 0.5 * np.arange(11)
    np.testing.assert_allclose(paths.values, np.tile(expected, (5, 1)), atol=1e-14)
    residuals = martingale_residuals(paths, params)
    assert np.all(residuals["mean_residual"].abs() < 1e-15)
    assert martingale_pass_rate(residuals) == 1.0


def test_paths_start_at_zero_and_are_seeded():
    params = MixtureGbmParams(0.05, [0.5, 0.5], [0.1, 0.3])
    a = simulate_mixture_gbm(params, 20, 1000, 1 / 252, seed=11, block_size=128)
    b = simulate_mixture_gbm(params, 20, 1000, 1 / 252, seed=11, block_size=128, n_workers=4)
    assert np.all(a.values[:, 0] == 0)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.seed == 11
    assert price_paths(a, 100.0)[:, 0] == pytest.approx(np.full(1000, 100.0))


def test_single_component_terminal_mean():
    mu, sigma, T, n = 0.05, 0.2, 252, 100000
    dt = 1 / 252
    paths = simulate_mixture_gbm(MixtureGbmParams(mu, [1.0], [sigma]), 50, n, dt * T / 50, seed=5)
    terminal = paths.terminal()
    t = 1.0
    assert abs(terminal.mean() - (mu - 0.5 * sigma ** 2) * t) < 3 * sigma * math.sqrt(t) / math.sqrt(n)


def test_three_component_terminal_variance():
    params = MixtureGbmParams(0.05, [0.5, 0.3, 0.2], [0.1, 0.2, 0.4])
    n = 100000
    paths = simulate_mixture_gbm(params, 10, n, 0.1, seed=9)
    t = 1.0
    var = paths.terminal().var(ddof=1)
    target = params.variance(t)
    # sd of the sample variance of a normal is var * sqrt(2 / (n - 1))
    assert abs(var - target) < 4 * target * math.sqrt(2.0 / (n - 1))
    assert abs(paths.terminal().mean() - params.mean(t)) < 4 * math.sqrt(target / n)


def test_martingale_three_component():
    params = MixtureGbmParams(0.05, [0.5, 0.3, 0.2], [0.1, 0.2, 0.4])
    paths = simulate_mixture_gbm(params, horizon=252, n_paths=100000, dt=1 / 252, seed=2024, n_workers=4)
    residuals = martingale_residuals(paths, params)
    assert list(residuals.columns) == ["step", "t", "mean_residual", "std_error"]
    assert len(residuals) == 252
    assert martingale_pass_rate(residuals, n_se=3.0) >= 0.99


def test_martingale_dimension_mismatch():
    paths = simulate_mixture_gbm(MixtureGbmParams(0.0, [1.0], [0.1]), 5, 10, 1.0, seed=0)
    with pytest.raises(DimensionError):
        martingale_residuals(paths, MixtureGbmParams(0.0, [0.5, 0.5], [0.1, 0.1]))


def test_simulation_rejects_bad_arguments():
    params = MixtureGbmParams(0.0, [1.0], [0.1])
    with pytest.raises(DomainError):
        simulate_mixture_gbm(params, 0, 10, 1.0)
    with pytest.raises(DomainError):
        simulate_mixture_gbm(params, 5, 10, 0.0)

#!/usr/bin/env python3
"""
Tests for concordance, the t-copula and the PCA comparison.
"""

import math
import os
import sys

import numpy as np
import pandas as pd
import pytest
from scipy import stats

sys.path.insert(0, os.path.abspath('.'))

from dprisk.copula import (
    ConcordanceMatrix, CopulaModel, fit_copula, gaussian_copula_logdensity, kendall_tau, pca_projection,
    simulate_joint, simulate_uniforms, t_copula_logdensity, tau_to_correlation,
)
from dprisk.dp_mixture import RpmEstimate
from dprisk.errors import DimensionError, DomainError, InsufficientDataError
from dprisk.numerics import is_positive_definite, nearest_correlation, project_to_simplex, spawn_generators

TRUE_CORR = np.array([
    [1.0, 0.6, 0.3],
    [0.6, 1.0, 0.1],
    [0.3, 0.1, 1.0],
])


def make_marginals():
    return [
        RpmEstimate.from_components([0.8, 0.2], [0.001, -0.003], [0.01, 0.03]),
        RpmEstimate.from_components([1.0], [0.0], [0.02]),
        RpmEstimate.from_components([0.5, 0.3, 0.2], [-0.01, 0.0, 0.02], [0.01, 0.015, 0.02]),
    ]


# ---------- Concordance ----------

def test_kendall_tau_small_examples():
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1.0 / 3.0)


def test_kendall_tau_errors():
    with pytest.raises(DimensionError):
        kendall_tau([1, 2, 3], [1, 2])
    with pytest.raises(InsufficientDataError):
        kendall_tau([1], [1])
    with pytest.raises(DomainError):
        kendall_tau([1, 1, 1], [1, 2, 3])


def test_tau_to_correlation():
    assert tau_to_correlation(0.0) == 0.0
    assert tau_to_correlation(1.0) == pytest.approx(1.0)
    assert tau_to_correlation(1.0 / 3.0) == pytest.approx(0.5)
    np.testing.assert_allclose(tau_to_correlation([-1.0, 1.0]), [-1.0, 1.0])
    with pytest.raises(DomainError):
        tau_to_correlation(1.5)


def test_constant_column_is_named():
    data = pd.DataFrame({"IBM": np.arange(20.0), "FLAT": np.ones(20)})
    with pytest.raises(DomainError, match="FLAT"):
        ConcordanceMatrix.from_returns(data)


# ---------- Numerics ----------

def test_nearest_correlation_repairs_indefinite_matrix():
    bad = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
    assert not is_positive_definite(bad)
    fixed = nearest_correlation(bad)
    assert is_positive_definite(fixed)
    np.testing.assert_allclose(np.diag(fixed), 1.0)
    np.testing.assert_allclose(fixed, fixed.T)
    np.testing.assert_allclose(nearest_correlation(TRUE_CORR), TRUE_CORR)


def test_project_to_simplex():
    np.testing.assert_allclose(project_to_simplex([0.2, 0.8]), [0.2, 0.8])
    np.testing.assert_allclose(project_to_simplex([2.0, 0.0]), [1.0, 0.0])
    w = project_to_simplex([-1.0, 0.5, 0.7])
    assert w.sum() == pytest.approx(1.0)
    assert np.all(w >= 0)


def test_substreams_are_reproducible():
    a = [g.standard_normal(3) for g in spawn_generators(5, 3)]
    b = [g.standard_normal(3) for g in spawn_generators(5, 3)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert not np.allclose(a[0], a[1])


# ---------- Copula densities ----------

def test_gaussian_density_at_center():
    corr = np.array([[1.0, 0.5], [0.5, 1.0]])
    assert gaussian_copula_logdensity([0.5, 0.5], corr) == pytest.approx(-0.5 * math.log(0.75), abs=1e-12)
    assert gaussian_copula_logdensity([0.3, 0.8], np.eye(2)) == pytest.approx(0.0, abs=1e-12)


def test_t_density_limits():
    corr = np.array([[1.0, 0.4], [0.4, 1.0]])
    u = np.array([[0.2, 0.7], [0.9, 0.95]])
    gauss = gaussian_copula_logdensity(u, corr)
    np.testing.assert_allclose(t_copula_logdensity(u, corr, math.inf), gauss)
    np.testing.assert_allclose(t_copula_logdensity(u, corr, 1e6), gauss, atol=1e-4)
    with pytest.raises(DomainError):
        gaussian_copula_logdensity([0.0, 0.5], corr)
    with pytest.raises(DimensionError):
        t_copula_logdensity([0.5, 0.5, 0.5], corr, 5.0)


def test_t_density_symmetries():
    corr = np.array([[1.0, 0.5], [0.5, 1.0]])
    u = np.array([[0.1, 0.6], [0.3, 0.97], [0.005, 0.008]])
    base = t_copula_logdensity(u, corr, 6.0)
    np.testing.assert_allclose(t_copula_logdensity(u[:, ::-1], corr, 6.0), base, atol=1e-10)
    np.testing.assert_allclose(t_copula_logdensity(1.0 - u, corr, 6.0), base, atol=1e-8)
    # lower-tail dependence: the joint corner is denser than under the Gaussian
    assert base[2] > gaussian_copula_logdensity(u[2], corr)


# ---------- Fit and simulation ----------

def test_model_validation():
    marginals = make_marginals()
    with pytest.raises(DomainError):
        CopulaModel(TRUE_CORR, 2.0, marginals)
    with pytest.raises(DimensionError):
        CopulaModel(TRUE_CORR, 10.0, marginals[:2])
    with pytest.raises(DomainError):
        CopulaModel(np.array([[1.0, 1.0], [1.0, 1.0]]), 10.0, marginals[:2])
    model = CopulaModel(TRUE_CORR, math.inf, marginals)
    assert model.is_gaussian
    assert model.asset_ids == ["asset_1", "asset_2", "asset_3"]
    assert model.to_dict()["df"] is None


def test_fit_copula_rejects_small_inputs():
    with pytest.raises(InsufficientDataError):
        fit_copula(np.zeros((5, 2)))
    with pytest.raises(DimensionError):
        fit_copula(np.arange(20.0).reshape(-1, 1))


def test_round_trip_recovers_correlation_and_marginals():
    marginals = make_marginals()
    model = CopulaModel(TRUE_CORR, 10.0, marginals, ["A", "B", "C"])
    joint = simulate_joint(model, 20000, seed=17)
    assert joint.to_frame().columns.tolist() == ["A", "B", "C"]

    refit = fit_copula(joint.to_frame(), df=10.0, marginals=marginals)
    assert np.max(np.abs(refit.correlation - TRUE_CORR)) < 0.05
    assert refit.asset_ids == ["A", "B", "C"]
    for j, rpm in enumerate(marginals):
        assert stats.kstest(joint.values[:, j], rpm.cdf).pvalue > 0.001


def test_simulation_is_seeded_and_block_independent():
    model = CopulaModel(TRUE_CORR, 10.0, make_marginals())
    a = simulate_joint(model, 3000, seed=8, block_size=1000)
    b = simulate_joint(model, 3000, seed=8, block_size=1000, n_workers=3)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.seed == 8
    with pytest.raises(DomainError):
        simulate_joint(model, 0, seed=8)


def test_simulation_inverts_through_cached_brackets():
    marginals = make_marginals()
    model = CopulaModel(TRUE_CORR, 10.0, marginals)
    joint = simulate_joint(model, 4000, seed=21)
    # one block, so the uniforms come from the first substream of the seed
    u = simulate_uniforms(model.correlation, 10.0, 4000, spawn_generators(21, 1)[0])
    for j, rpm in enumerate(marginals):
        assert rpm._bracket is not None
        np.testing.assert_allclose(joint.values[:, j], rpm.quantile(u[:, j]), rtol=0, atol=1e-12)


# ---------- PCA ----------

def test_pca_identical_inputs_project_identically():
    rng = np.random.default_rng(12)
    data = rng.multivariate_normal(np.zeros(3), TRUE_CORR, size=500)
    cmp = pca_projection(data, data)
    np.testing.assert_allclose(cmp.observed_scores, cmp.simulated_scores)
    np.testing.assert_allclose(cmp.observed_ratio, cmp.simulated_ratio, rtol=1e-10)
    frame = cmp.to_frame()
    assert frame.columns.tolist() == ["source", "pc1", "pc2"]
    assert len(frame) == 1000


def test_pca_isotropic_ratios():
    rng = np.random.default_rng(13)
    data = rng.standard_normal((20000, 4))
    cmp = pca_projection(data, data[:5000], n_components=4)
    np.testing.assert_allclose(cmp.observed_ratio, 0.25, atol=0.02)
    assert cmp.observed_ratio.sum() == pytest.approx(1.0)


def test_pca_errors_and_rank_deficiency():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((100, 2))
    with pytest.raises(DimensionError):
        pca_projection(x, x[:, :1])
    with pytest.raises(DimensionError):
        pca_projection(x[:, :1], x[:, :1])
    dup = np.column_stack([x[:, 0], x[:, 0], x[:, 1]])
    with pytest.warns(UserWarning, match="rank deficient"):
        cmp = pca_projection(dup, dup, n_components=3)
    assert cmp.rank_deficient
    assert cmp.observed_scores.shape[1] == 2

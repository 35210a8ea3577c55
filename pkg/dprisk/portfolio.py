"""
Portfolio weights, aggregation of joint returns and mean-variance selection.
"""

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from .copula import CopulaModel, JointSample, simulate_joint
from .errors import ConfigError, DimensionError, DomainError, NumericalError
from .numerics import SeedLike, is_positive_definite, nearest_covariance, project_to_simplex
from .risk import DEFAULT_QUAD_NODES, EmpiricalLoss, MixtureLoss, RiskReport, risk_profile

logger = logging.getLogger(__name__)

PORTFOLIO_COLUMN = "Portfolio"


@dataclass(frozen=True, eq=False)
class Portfolio:
    """Asset ids and weights summing to one."""

    asset_ids: List[str]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != len(self.asset_ids):
            raise DimensionError(f"{w.size} weights for {len(self.asset_ids)} assets")
        if not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must be finite and sum to 1, got sum {w.sum()!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "asset_ids", list(self.asset_ids))

    @classmethod
    def normalized(cls, asset_ids: Sequence[str], weights) -> "Portfolio":
        """Rescale raw weights to sum to one; the last weight absorbs rounding."""
        w = np.asarray(weights, dtype=float).ravel()
        total = w.sum()
        if not np.isfinite(total) or total == 0:
            raise DomainError("weights cannot be normalized (zero or non-finite sum)")
        w = w / total
        w[-1] = 1.0 - w[:-1].sum()
        return cls(list(asset_ids), w)

    @classmethod
    def equal(cls, asset_ids: Sequence[str]) -> "Portfolio":
        return cls.normalized(asset_ids, np.ones(len(asset_ids)))

    def to_dict(self):
        return {"asset_ids": self.asset_ids, "weights": self.weights.tolist()}

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        return text


def _weights_of(weights) -> np.ndarray:
    return weights.weights if isinstance(weights, Portfolio) else np.asarray(weights, dtype=float).ravel()


def portfolio_returns(weights, joint) -> np.ndarray:
    """Row-wise omega^T R_t."""
    w = _weights_of(weights)
    if isinstance(joint, JointSample):
        values = joint.values
    elif isinstance(joint, pd.DataFrame):
        values = joint.to_numpy(dtype=float)
    else:
        values = np.asarray(joint, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[1] != w.size:
        raise DimensionError(f"{w.size} weights for {values.shape[1]} return columns")
    return values @ w


def _prepare(mean, cov) -> Tuple[np.ndarray, np.ndarray]:
    mu = np.asarray(mean, dtype=float).ravel()
    sigma = np.asarray(cov, dtype=float)
    if sigma.shape != (mu.size, mu.size):
        raise DimensionError(f"covariance shape {sigma.shape} does not match {mu.size} means")
    if not is_positive_definite(sigma):
        warnings.warn("Covariance matrix is singular or not positive definite; using the nearest PD matrix")
        logger.warning("Repairing covariance matrix before optimization")
        sigma = nearest_covariance(sigma)
    return mu, sigma


def _closed_form(mu, sigma, risk_aversion, target_return):
    ones = np.ones(mu.size)
    inv_one = np.linalg.solve(sigma, ones)
    inv_mu = np.linalg.solve(sigma, mu)
    A = ones @ inv_one
    B = ones @ inv_mu
    if target_return is not None:
        C = mu @ inv_mu
        D = A * C - B ** 2
        if D <= 1e-14 * max(A * C, 1.0):
            raise DomainError("target-return frontier is undefined when all expected returns coincide")
        return ((C - target_return * B) * inv_one + (target_return * A - B) * inv_mu) / D
    w = inv_one / A
    if risk_aversion is not None:
        w = w + (inv_mu - (B / A) * inv_one) / (2.0 * risk_aversion)
    return w


def _long_only(mu, sigma, risk_aversion, target_return, max_iter=100000, tol=1e-13):
    if target_return is not None:
        if not mu.min() - 1e-12 <= target_return <= mu.max() + 1e-12:
            raise DomainError(f"target return {target_return} is not attainable without short positions")
        x0 = np.full(mu.size, 1.0 / mu.size)
        res = minimize(
            lambda w: w @ sigma @ w, x0, jac=lambda w: 2.0 * sigma @ w, method="SLSQP",
            bounds=[(0.0, 1.0)] * mu.size,
            constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0},
                         {"type": "eq", "fun": lambda w: w @ mu - target_return}],
            options={"ftol": 1e-15, "maxiter": 1000},
        )
        if not res.success:
            raise NumericalError(f"long-only optimization failed: {res.message}")
        w = np.clip(res.x, 0.0, None)
        return w / w.sum()

    tilt = mu / risk_aversion if risk_aversion is not None else np.zeros(mu.size)
    step = 1.0 / (2.0 * np.linalg.eigvalsh(sigma).max())
    w = project_to_simplex(_closed_form(mu, sigma, risk_aversion, None))
    for _ in range(max_iter):
        grad = 2.0 * sigma @ w - tilt
        nxt = project_to_simplex(w - step * grad)
        if np.max(np.abs(nxt - w)) < tol:
            return nxt
        w = nxt
    logger.warning("Projected gradient reached the iteration cap")
    return w


def mean_variance_weights(mean, cov, risk_aversion: Optional[float] = None,
                          target_return: Optional[float] = None, long_only: bool = False,
                          asset_ids: Optional[Sequence[str]] = None) -> Portfolio:
    """Markowitz weights.

    Minimizes w'Sw - (1/lambda) mu'w subject to sum(w) = 1 when
    ``risk_aversion`` is given, w'Sw subject to sum(w) = 1 and mu'w = target
    when ``target_return`` is given, and plain minimum variance otherwise.
    """
    if risk_aversion is not None and target_return is not None:
        raise ConfigError("give either risk_aversion or target_return, not both")
    if risk_aversion is not None and not risk_aversion > 0:
        raise DomainError(f"risk_aversion must be positive, got {risk_aversion!r}")
    mu, sigma = _prepare(mean, cov)
    ids = list(asset_ids) if asset_ids is not None else [f"asset_{j + 1}" for j in range(mu.size)]
    if long_only:
        w = _long_only(mu, sigma, risk_aversion, target_return)
    else:
        w = _closed_form(mu, sigma, risk_aversion, target_return)
    return Portfolio.normalized(ids, w)


def efficient_frontier(mean, cov, targets: Sequence[float], long_only: bool = False,
                       asset_ids: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Minimum-variance portfolio for each target return."""
    mu, sigma = _prepare(mean, cov)
    ids = list(asset_ids) if asset_ids is not None else [f"asset_{j + 1}" for j in range(mu.size)]
    rows = []
    for target in targets:
        p = mean_variance_weights(mu, sigma, target_return=target, long_only=long_only, asset_ids=ids)
        variance = float(p.weights @ sigma @ p.weights)
        row = {"target_return": float(target), "variance": variance, "volatility": variance ** 0.5}
        row.update({f"w_{a}": v for a, v in zip(ids, p.weights)})
        rows.append(row)
    return pd.DataFrame(rows)


def moment_inputs(returns=None, marginals=None, copula: Optional[CopulaModel] = None,
                  source: str = "sample") -> Tuple[np.ndarray, np.ndarray]:
    """Mean vector and covariance for mean-variance selection.

    ``sample`` uses the observed return matrix; ``rpm`` uses the marginal
    mixture moments combined with the copula correlation.
    """
    if source == "sample":
        if returns is None:
            raise ConfigError("sample moments need a return matrix")
        values = returns.to_numpy(dtype=float) if isinstance(returns, pd.DataFrame) else np.asarray(returns, dtype=float)
        return values.mean(axis=0), np.cov(values, rowvar=False, ddof=1)
    if source == "rpm":
        if copula is None:
            raise ConfigError("rpm moments need a fitted copula")
        marginals = list(marginals) if marginals is not None else copula.marginals
        if len(marginals) != copula.p:
            raise DimensionError(f"{len(marginals)} marginals for a {copula.p}-asset copula")
        mean = np.array([m.mean() for m in marginals])
        sd = np.sqrt([m.variance() for m in marginals])
        return mean, copula.correlation * np.outer(sd, sd)
    raise ConfigError(f"unknown moment source {source!r} (expected 'sample' or 'rpm')")


def portfolio_risk(weights, model: CopulaModel, gammas: Sequence[float] = (0.01, 0.05), r: float = 0.5,
                   n_sims: int = 100000, seed: SeedLike = None, observed=None,
                   joint: Optional[JointSample] = None, quad: int = DEFAULT_QUAD_NODES) -> RiskReport:
    """Risk of the portfolio under the fitted copula, next to the per-asset marginal risk.

    Args:
        weights: Portfolio or raw weight vector (one per copula asset)
        model: fitted CopulaModel
        gammas: tail probabilities
        r: Wang market price of risk
        n_sims: joint draws when ``joint`` is not supplied
        seed: root seed of the joint simulation
        observed: optional n x p observed returns; adds the Empirical rows
        joint: precomputed joint sample

    Returns:
        RiskReport with one column per asset and a Portfolio column
    """
    w = _weights_of(weights)
    if w.size != model.p:
        raise DimensionError(f"{w.size} weights for a {model.p}-asset copula")
    if joint is None:
        joint = simulate_joint(model, n_sims, seed)
    simulated = portfolio_returns(w, joint)

    report = RiskReport(list(gammas), float(r))
    obs = None
    if observed is not None:
        obs = observed.to_numpy(dtype=float) if isinstance(observed, pd.DataFrame) else np.asarray(observed, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.shape[1] != model.p:
            raise DimensionError(f"observed returns have {obs.shape[1]} columns, copula has {model.p}")

    for j, (asset, marginal) in enumerate(zip(model.asset_ids, model.marginals)):
        if obs is not None:
            report.add(asset, "Empirical", risk_profile(EmpiricalLoss(obs[:, j]), gammas, r, quad))
        report.add(asset, "Copula Estimated", risk_profile(MixtureLoss(marginal), gammas, r, quad))
    if obs is not None:
        report.add(PORTFOLIO_COLUMN, "Empirical", risk_profile(EmpiricalLoss(obs @ w), gammas, r, quad))
    report.add(PORTFOLIO_COLUMN, "Copula Estimated", risk_profile(EmpiricalLoss(simulated), gammas, r, quad))

    for issue in report.violations():
        logger.warning(f"ESF above VaR in {issue}")
    return report

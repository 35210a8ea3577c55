"""
Price and return data model, mixture-GBM path simulation and the empirical
martingale check for the drift-compensated log-return.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import DimensionError, DomainError, InputError, InsufficientDataError
from .numerics import SeedLike, spawn_generators

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Timestamped positive prices of one asset."""

    asset_id: str
    timestamps: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        timestamps = np.asarray(self.timestamps)
        if prices.ndim != 1 or timestamps.shape != prices.shape:
            raise DimensionError(
                f"{self.asset_id}: timestamps {timestamps.shape} and prices {prices.shape} must be 1-D of equal length"
            )
        if prices.size < 2:
            raise InsufficientDataError(f"{self.asset_id}: need at least 2 prices, got {prices.size}")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0):
            raise InputError(f"{self.asset_id}: prices must be finite and strictly positive")
        steps = np.diff(timestamps)
        if not np.all(steps > np.zeros_like(steps)):
            raise InputError(f"{self.asset_id}: timestamps must be strictly increasing")
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "timestamps", timestamps)

    def __len__(self):
        return self.prices.size


@dataclass(frozen=True, eq=False)
class LogReturnSeries:
    """Per-period log increments R_t = ln(S_t / S_{t-1})."""

    asset_id: str
    returns: np.ndarray
    period: str = "day"
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        returns = np.asarray(self.returns, dtype=float)
        if returns.ndim != 1:
            raise DimensionError(f"{self.asset_id}: returns must be 1-D")
        object.__setattr__(self, "returns", returns)

    def __len__(self):
        return self.returns.size

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"return": self.returns})
        if self.timestamps is not None:
            df.insert(0, "timestamp", self.timestamps)
        return df


@dataclass(frozen=True, eq=False)
class MixtureGbmParams:
    """Drift, component weights and component volatilities of the weighted-Brownian model.

    The log-return is r_t = mu*t + sum_i pi_i*sigma_i*B^i_t - 0.5*sum_i pi_i*sigma_i^2*t
    with independent Brownian motions B^i. Volatilities may be zero.
    """

    mu: float
    weights: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        sigmas = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        if weights.ndim != 1 or weights.size < 1:
            raise DimensionError("weights must be a non-empty 1-D sequence")
        if sigmas.shape != weights.shape:
            raise DimensionError(f"weights {weights.shape} and sigmas {sigmas.shape} differ in length")
        if not math.isfinite(self.mu):
            raise DomainError("mu must be finite")
        if np.any(weights < 0) or np.any(weights > 1):
            raise DomainError("weights must lie in [0, 1]")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must sum to 1, got {weights.sum()!r}")
        if not np.all(np.isfinite(sigmas)) or np.any(sigmas < 0):
            raise DomainError("sigmas must be finite and non-negative")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def compensated_drift(self) -> float:
        """mu - 0.5 * sum(pi_i * sigma_i^2), the deterministic slope of r_t."""
        return float(self.mu - 0.5 * np.sum(self.weights * self.sigmas ** 2))

    def mean(self, t: float) -> float:
        return self.compensated_drift * t

    def variance(self, t: float) -> float:
        return float(np.sum(self.weights ** 2 * self.sigmas ** 2) * t)


@dataclass(frozen=True, eq=False)
class SimulatedPaths:
    """n_paths x (horizon + 1) log-return paths, starting at zero."""

    horizon: int
    n_paths: int
    values: np.ndarray
    seed: Optional[int]
    dt: float
    n_components: int = field(default=1)

    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


def compute_log_returns(prices: PriceSeries) -> LogReturnSeries:
    """ln(S_{i+1}/S_i) for consecutive prices.

    Args:
        prices: validated price series

    Returns:
        LogReturnSeries of length len(prices) - 1, stamped with the closing timestamps
    """
    if not isinstance(prices, PriceSeries):
        prices = PriceSeries("series", np.arange(len(prices)), prices)
    returns = np.diff(np.log(prices.prices))
    return LogReturnSeries(prices.asset_id, returns, timestamps=prices.timestamps[1:])


def reconstruct_prices(returns, s0: float = 1.0) -> np.ndarray:
    """Invert compute_log_returns: s0 * exp(cumsum) with the starting price prepended."""
    r = returns.returns if isinstance(returns, LogReturnSeries) else np.asarray(returns, dtype=float)
    if s0 <= 0:
        raise DomainError("s0 must be positive")
    return s0 * np.exp(np.concatenate(([0.0], np.cumsum(r))))


def fit_bs_params(returns, dt: float = 1.0) -> Tuple[float, float]:
    """Maximum-likelihood (mu, sigma) of a single GBM from its log-returns."""
    r = returns.returns if isinstance(returns, LogReturnSeries) else np.asarray(returns, dtype=float)
    if r.size < 2:
        raise InsufficientDataError(f"need at least 2 returns, got {r.size}")
    if dt <= 0:
        raise DomainError("dt must be positive")
    sigma_sq = float(np.var(r)) / dt
    mu = float(np.mean(r)) / dt + 0.5 * sigma_sq
    return mu, math.sqrt(sigma_sq)


def _simulate_block(params: MixtureGbmParams, rng: np.random.Generator, n_rows: int,
                    horizon: int, dt: float) -> np.ndarray:
    loadings = params.weights * params.sigmas
    shocks = rng.standard_normal((n_rows, horizon, params.n_components))
    increments = shocks @ (loadings * math.sqrt(dt)) + params.compensated_drift * dt
    block = np.zeros((n_rows, horizon + 1))
    np.cumsum(increments, axis=1, out=block[:, 1:])
    return block


def simulate_mixture_gbm(params: MixtureGbmParams, horizon: int, n_paths: int, dt: float,
                         seed: SeedLike = None, block_size: int = 4096,
                         n_workers: int = 1) -> SimulatedPaths:
    """Simulate log-return paths of the weighted-Brownian model.

    Paths are generated in blocks of ``block_size`` rows, each block drawing from
    its own Philox substream of ``seed``; the output does not depend on
    ``n_workers``.
    """
    if int(horizon) != horizon or horizon < 1:
        raise DomainError(f"horizon must be a positive integer, got {horizon}")
    if int(n_paths) != n_paths or n_paths < 1:
        raise DomainError(f"n_paths must be a positive integer, got {n_paths}")
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    horizon, n_paths = int(horizon), int(n_paths)

    n_blocks = -(-n_paths // block_size)
    rngs = spawn_generators(seed, n_blocks)
    sizes = [min(block_size, n_paths - k * block_size) for k in range(n_blocks)]

    def run(k):
        return _simulate_block(params, rngs[k], sizes[k], horizon, dt)

    if n_workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            blocks = list(pool.map(run, range(n_blocks)))
    else:
        blocks = [run(k) for k in range(n_blocks)]

    values = np.vstack(blocks)
    logger.info(f"Simulated {n_paths} paths x {horizon} steps ({params.n_components} components)")
    stored_seed = int(seed) if isinstance(seed, (int, np.integer)) else None
    return SimulatedPaths(horizon, n_paths, values, stored_seed, float(dt), params.n_components)


def price_paths(paths: SimulatedPaths, s0: float = 1.0) -> np.ndarray:
    """Price paths S_t = s0 * exp(r_t)."""
    if s0 <= 0:
        raise DomainError("s0 must be positive")
    return s0 * np.exp(paths.values)


def martingale_residuals(paths: SimulatedPaths, params: MixtureGbmParams) -> pd.DataFrame:
    """Per-step cross-path mean of the drift-compensated increment and its standard error.

    With r~_t = r_t - t*(mu - 0.5*sum(pi*sigma^2)), a martingale gives means
    statistically indistinguishable from zero.

    Returns:
        DataFrame with columns step, t, mean_residual, std_error
    """
    if paths.n_components != params.n_components:
        raise DimensionError(
            f"paths were simulated with {paths.n_components} components, params have {params.n_components}"
        )
    if paths.values.shape != (paths.n_paths, paths.horizon + 1):
        raise DimensionError(f"path matrix shape {paths.values.shape} does not match metadata")

    steps = np.diff(paths.values, axis=1) - params.compensated_drift * paths.dt
    means = steps.mean(axis=0)
    if paths.n_paths > 1:
        se = steps.std(axis=0, ddof=1) / math.sqrt(paths.n_paths)
    else:
        se = np.zeros_like(means)
    idx = np.arange(1, paths.horizon + 1)
    return pd.DataFrame({
        "step": idx,
        "t": idx * paths.dt,
        "mean_residual": means,
        "std_error": se,
    })


def martingale_pass_rate(residuals: pd.DataFrame, n_se: float = 3.0, atol: float = 1e-12) -> float:
    """Fraction of steps whose mean residual lies within ``n_se`` standard errors of zero."""
    if len(residuals) == 0:
        raise InsufficientDataError("no residual steps")
    ok = np.abs(residuals["mean_residual"].to_numpy()) <= n_se * residuals["std_error"].to_numpy() + atol
    return float(ok.mean())


def make_price_series(asset_id: str, prices: Sequence[float], timestamps=None) -> PriceSeries:
    """Convenience constructor using day indices when timestamps are omitted."""
    prices = np.asarray(prices, dtype=float)
    if timestamps is None:
        timestamps = np.arange(prices.size)
    return PriceSeries(asset_id, np.asarray(timestamps), prices)

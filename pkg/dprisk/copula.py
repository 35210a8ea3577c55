"""
Dependence layer: Kendall's tau concordance, an elliptical t-copula over
DP-mixture marginals, joint simulation and principal-component comparison of
observed and simulated returns.
"""

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import ndtr, ndtri
from sklearn.decomposition import PCA
from sklearn.preprocessing import StandardScaler

from .dp_mixture import RpmEstimate
from .errors import DimensionError, DomainError, InsufficientDataError, MarginalError
from .numerics import SeedLike, nearest_correlation, spawn_generators

logger = logging.getLogger(__name__)

DEFAULT_DF = 10.0
UNIFORM_CLIP = 1e-16
PD_TOL = 1e-10


def _write_json(payload, path):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    return text


def _default_ids(p: int) -> List[str]:
    return [f"asset_{j + 1}" for j in range(p)]


def kendall_tau(x, y) -> float:
    """Kendall's tau-b with tie correction (scipy's O(n log n) merge-sort count)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise DimensionError(f"samples differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise InsufficientDataError("Kendall's tau needs at least 2 pairs")
    tau = stats.kendalltau(x, y, variant="b")[0]
    if not math.isfinite(tau):
        raise DomainError("Kendall's tau is undefined for a constant sample")
    return float(tau)


def tau_to_correlation(tau):
    """rho = sin(pi * tau / 2), the elliptical-copula relation."""
    t = np.asarray(tau, dtype=float)
    if np.any(t < -1) or np.any(t > 1):
        raise DomainError("tau must lie in [-1, 1]")
    rho = np.sin(0.5 * np.pi * t)
    return float(rho) if rho.ndim == 0 else rho


@dataclass(frozen=True, eq=False)
class ConcordanceMatrix:
    """Pairwise Kendall's tau for p assets."""

    tau: np.ndarray
    asset_ids: List[str]

    @classmethod
    def from_returns(cls, returns, asset_ids: Optional[Sequence[str]] = None) -> "ConcordanceMatrix":
        values, ids = _as_matrix(returns, asset_ids)
        p = values.shape[1]
        tau = np.eye(p)
        for i in range(p):
            for j in range(i + 1, p):
                try:
                    tau[i, j] = tau[j, i] = kendall_tau(values[:, i], values[:, j])
                except DomainError as e:
                    logger.error(f"Kendall's tau undefined for pair ({ids[i]}, {ids[j]})")
                    raise DomainError(f"Kendall's tau undefined for columns {ids[i]!r} and {ids[j]!r}: {e}") from e
        return cls(tau, ids)

    def correlation(self) -> np.ndarray:
        rho = tau_to_correlation(self.tau)
        np.fill_diagonal(rho, 1.0)
        return rho

    def to_dict(self):
        return {"asset_ids": list(self.asset_ids), "tau": self.tau.tolist()}

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        return _write_json(self.to_dict(), path)


@dataclass(frozen=True, eq=False)
class CopulaModel:
    """Elliptical copula (t with ``df`` degrees of freedom, Gaussian when df is inf) over p marginals."""

    correlation: np.ndarray
    df: float
    marginals: List[RpmEstimate]
    asset_ids: List[str] = field(default_factory=list)
    concordance: Optional[ConcordanceMatrix] = None

    def __post_init__(self):
        corr = np.asarray(self.correlation, dtype=float)
        if corr.ndim != 2 or corr.shape[0] != corr.shape[1] or corr.shape[0] < 1:
            raise DimensionError(f"correlation must be square, got {corr.shape}")
        p = corr.shape[0]
        if not np.allclose(corr, corr.T, atol=1e-12) or not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise DomainError("correlation must be symmetric with a unit diagonal")
        if np.linalg.eigvalsh(corr).min() <= PD_TOL:
            raise DomainError("correlation must be positive definite")
        if not (self.df > 2):
            raise DomainError(f"df must exceed 2 (or be inf), got {self.df!r}")
        if len(self.marginals) != p:
            raise DimensionError(f"{len(self.marginals)} marginals for a {p}-dimensional copula")
        object.__setattr__(self, "correlation", corr)
        object.__setattr__(self, "marginals", list(self.marginals))
        object.__setattr__(self, "asset_ids", list(self.asset_ids) or _default_ids(p))

    @property
    def p(self) -> int:
        return self.correlation.shape[0]

    @property
    def is_gaussian(self) -> bool:
        return math.isinf(self.df)

    def to_dict(self):
        return {
            "asset_ids": self.asset_ids,
            "correlation": self.correlation.tolist(),
            "df": None if self.is_gaussian else self.df,
        }

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        return _write_json(self.to_dict(), path)


@dataclass(frozen=True, eq=False)
class JointSample:
    """n x p matrix of simulated log-returns."""

    values: np.ndarray
    asset_ids: List[str]
    seed: Optional[int] = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.asset_ids):
            raise DimensionError("sample columns must match asset ids")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("joint sample contains non-finite values")

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.values.shape[0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.asset_ids)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def _as_matrix(returns, asset_ids=None):
    if isinstance(returns, pd.DataFrame):
        ids = list(asset_ids) if asset_ids is not None else [str(c) for c in returns.columns]
        values = returns.to_numpy(dtype=float)
    elif isinstance(returns, JointSample):
        ids = list(asset_ids) if asset_ids is not None else list(returns.asset_ids)
        values = returns.values
    else:
        values = np.asarray(returns, dtype=float)
        if values.ndim != 2:
            raise DimensionError(f"expected an n x p matrix, got shape {values.shape}")
        ids = list(asset_ids) if asset_ids is not None else _default_ids(values.shape[1])
    if len(ids) != values.shape[1]:
        raise DimensionError(f"{len(ids)} asset ids for {values.shape[1]} columns")
    return values, ids


def fit_copula(returns, df: float = DEFAULT_DF, marginals: Sequence[RpmEstimate] = (),
               asset_ids: Optional[Sequence[str]] = None) -> CopulaModel:
    """Fit the copula correlation by inverting pairwise Kendall's tau.

    Args:
        returns: n x p observed returns (array or DataFrame)
        df: t-copula degrees of freedom (inf for Gaussian)
        marginals: one fitted RpmEstimate per column
        asset_ids: column names (DataFrame columns by default)

    Returns:
        CopulaModel whose correlation is the nearest PD matrix to sin(pi*tau/2)
    """
    values, ids = _as_matrix(returns, asset_ids)
    n, p = values.shape
    if n < 10:
        raise InsufficientDataError(f"copula fit needs at least 10 rows, got {n}")
    if p < 2:
        raise DimensionError(f"copula fit needs at least 2 columns, got {p}")
    concordance = ConcordanceMatrix.from_returns(values, ids)
    corr = nearest_correlation(concordance.correlation())
    logger.info(f"Fitted {p}-asset copula on {n} rows (df={df})")
    return CopulaModel(corr, df, list(marginals), ids, concordance)


def simulate_uniforms(correlation, df: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws from the elliptical copula on (0, 1)^p."""
    chol = np.linalg.cholesky(np.asarray(correlation, dtype=float))
    z = rng.standard_normal((n, chol.shape[0])) @ chol.T
    if math.isinf(df):
        u = ndtr(z)
    else:
        w = rng.chisquare(df, size=(n, 1)) / df
        u = stats.t.cdf(z / np.sqrt(w), df)
    return np.clip(u, UNIFORM_CLIP, 1.0 - UNIFORM_CLIP)


def simulate_joint(model: CopulaModel, n: int, seed: SeedLike = None,
                   block_size: int = 65536, n_workers: int = 1) -> JointSample:
    """Draw copula uniforms and map each column through its marginal predictive quantile.

    Rows are generated in blocks, each on its own Philox substream of ``seed``.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    n = int(n)
    n_blocks = -(-n // block_size)
    rngs = spawn_generators(seed, n_blocks)
    sizes = [min(block_size, n - k * block_size) for k in range(n_blocks)]

    def run(k):
        return simulate_uniforms(model.correlation, model.df, sizes[k], rngs[k])

    if n_workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            u = np.vstack(list(pool.map(run, range(n_blocks))))
    else:
        u = np.vstack([run(k) for k in range(n_blocks)])

    out = np.empty_like(u)
    for j, (marginal, column) in enumerate(zip(model.marginals, model.asset_ids)):
        try:
            bracket_of = getattr(marginal, "quantile_bracket", None)
            if bracket_of is not None:
                out[:, j] = marginal.quantile(u[:, j], bracket=bracket_of())
            else:
                out[:, j] = marginal.quantile(u[:, j])
        except Exception as e:
            logger.error(f"Marginal quantile failed for column {column}: {e}")
            raise MarginalError(f"marginal quantile failed for column {column!r}: {e}", column=column) from e
        if not np.all(np.isfinite(out[:, j])):
            raise MarginalError(f"non-finite marginal quantiles in column {column!r}", column=column)
    stored_seed = int(seed) if isinstance(seed, (int, np.integer)) else None
    return JointSample(out, list(model.asset_ids), stored_seed)


def _check_uniforms(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(u)) or np.any(u <= 0) or np.any(u >= 1):
        raise DomainError("copula arguments must lie strictly inside (0, 1)")
    return u


def gaussian_copula_logdensity(u, correlation):
    """log c(u) = -0.5 log|S| - 0.5 q^T (S^-1 - I) q with q = Phi^-1(u)."""
    u = _check_uniforms(u)
    corr = np.asarray(correlation, dtype=float)
    if u.shape[-1] != corr.shape[0]:
        raise DimensionError(f"u has {u.shape[-1]} coordinates, correlation is {corr.shape}")
    sign, logdet = np.linalg.slogdet(corr)
    if sign <= 0:
        raise DomainError("correlation must be positive definite")
    q = ndtri(u)
    a = np.linalg.inv(corr) - np.eye(corr.shape[0])
    quad = np.einsum("...i,ij,...j->...", q, a, q)
    out = -0.5 * logdet - 0.5 * quad
    return float(out) if np.ndim(out) == 0 else out


def t_copula_logdensity(u, correlation, df: float):
    """Log density of the t-copula: joint t log-density minus the marginal t log-densities."""
    u = _check_uniforms(u)
    corr = np.asarray(correlation, dtype=float)
    if u.shape[-1] != corr.shape[0]:
        raise DimensionError(f"u has {u.shape[-1]} coordinates, correlation is {corr.shape}")
    if math.isinf(df):
        return gaussian_copula_logdensity(u, corr)
    x = stats.t.ppf(u, df)
    joint = stats.multivariate_t(loc=np.zeros(corr.shape[0]), shape=corr, df=df).logpdf(x)
    out = joint - np.sum(stats.t.logpdf(x, df), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class PcaComparison:
    """Observed and simulated returns projected on the observed principal axes."""

    observed_scores: np.ndarray
    simulated_scores: np.ndarray
    observed_ratio: np.ndarray
    simulated_ratio: np.ndarray
    components: np.ndarray
    rank_deficient: bool = False

    def to_frame(self) -> pd.DataFrame:
        k = self.observed_scores.shape[1]
        cols = [f"pc{i + 1}" for i in range(k)]
        obs = pd.DataFrame(self.observed_scores, columns=cols)
        obs.insert(0, "source", "observed")
        sim = pd.DataFrame(self.simulated_scores, columns=cols)
        sim.insert(0, "source", "simulated")
        return pd.concat([obs, sim], ignore_index=True)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def pca_projection(observed, simulated, n_components: int = 2) -> PcaComparison:
    """Project both datasets on the principal axes of the observed correlation matrix.

    Both sets are standardized with the observed means and scales, so the
    axes are those of the observed correlation matrix. Explained-variance
    ratios of the simulated set are its variance along those axes over its
    total standardized variance.
    """
    obs, _ = _as_matrix(observed)
    sim, _ = _as_matrix(simulated)
    p = obs.shape[1]
    if p < 2:
        raise DimensionError("PCA comparison needs at least 2 columns")
    if sim.shape[1] != p:
        raise DimensionError(f"observed has {p} columns, simulated has {sim.shape[1]}")

    scaler = StandardScaler().fit(obs)
    obs_std = scaler.transform(obs)
    sim_std = scaler.transform(sim)

    rank = int(np.linalg.matrix_rank(obs_std))
    k = min(n_components, p, obs.shape[0])
    rank_deficient = rank < p
    if rank_deficient:
        k = max(min(k, rank), 1)
        warnings.warn(f"observed returns are rank deficient (rank {rank} < {p}); keeping {k} components")
        logger.warning(f"PCA on rank-deficient input: rank {rank} of {p}")

    pca = PCA(n_components=k).fit(obs_std)
    obs_scores = pca.transform(obs_std)
    sim_scores = pca.transform(sim_std)
    sim_total = float(np.sum(np.var(sim_std, axis=0, ddof=1))) if sim.shape[0] > 1 else 0.0
    sim_ratio = np.var(sim_scores, axis=0, ddof=1) / sim_total if sim_total > 0 else np.zeros(k)
    return PcaComparison(obs_scores, sim_scores, pca.explained_variance_ratio_.copy(),
                         sim_ratio, pca.components_.copy(), rank_deficient)

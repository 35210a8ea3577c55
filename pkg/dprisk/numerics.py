"""
Small numerical helpers shared across dprisk modules.
"""

import logging
from typing import List, Optional, Union

import numpy as np

from .errors import DimensionError

logger = logging.getLogger(__name__)

SeedLike = Optional[Union[int, np.random.SeedSequence]]

EIGEN_FLOOR = 1e-8


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    """Coerce an int (or None) into a SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def spawn_generators(seed: SeedLike, n: int) -> List[np.random.Generator]:
    """Independent Philox generators spawned from one root seed.

    Substream ``k`` depends only on the root seed and ``k``, so work split
    into blocks reproduces regardless of execution order.
    """
    children = as_seed_sequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def make_generator(seed: SeedLike) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(as_seed_sequence(seed)))


def nearest_correlation(matrix, floor: float = EIGEN_FLOOR) -> np.ndarray:
    """Nearest positive-definite correlation matrix by eigenvalue clipping.

    Eigenvalues are clipped at ``floor`` and the result is rescaled back to a
    unit diagonal. A matrix that is already PD with a unit diagonal comes back
    unchanged up to rounding.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {a.shape}")
    a = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(a)
    if vals.min() > floor:
        return a
    logger.warning(f"Repairing non-PD matrix (smallest eigenvalue {vals.min():.3e})")
    repaired = (vecs * np.maximum(vals, floor)) @ vecs.T
    d = np.sqrt(np.diag(repaired))
    repaired = repaired / np.outer(d, d)
    np.fill_diagonal(repaired, 1.0)
    return 0.5 * (repaired + repaired.T)


def nearest_covariance(cov, floor: float = EIGEN_FLOOR) -> np.ndarray:
    """Nearest PD covariance: repair the implied correlation, keep the variances."""
    a = np.asarray(cov, dtype=float)
    a = 0.5 * (a + a.T)
    sd = np.sqrt(np.clip(np.diag(a), floor, None))
    corr = a / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)
    return nearest_correlation(corr, floor) * np.outer(sd, sd)


def is_positive_definite(matrix, tol: float = 1e-10) -> bool:
    a = np.asarray(matrix, dtype=float)
    if not np.allclose(a, a.T, atol=1e-12):
        return False
    return bool(np.linalg.eigvalsh(a).min() > tol)


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto {w : w >= 0, sum(w) = 1}."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)

"""
Benchmarks for fitted return densities: kernel density estimates, mean
square deviations between density curves and highest-posterior-density
intervals.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from .dp_mixture import GibbsTrace, RpmEstimate
from .errors import DomainError, InsufficientDataError

logger = logging.getLogger(__name__)

GRID_POINTS = 512
GRID_PAD = 3.0
BANDWIDTH_FLOOR = 1e-9
HPD_MIN_SAMPLES = 20


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Density values on a grid, tagged KDE, RPM or BS."""

    x: np.ndarray
    density: np.ndarray
    source: str

    def __post_init__(self):
        if self.x.shape != self.density.shape or self.x.ndim != 1:
            raise DomainError("grid and density must be 1-D arrays of equal length")
        if np.any(self.density < 0):
            raise DomainError("densities must be non-negative")

    def integral(self) -> float:
        return float(np.sum(0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.x)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.x, "density": self.density, "source": self.source})

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def silverman_bandwidth(data) -> float:
    """0.9 * min(sd, IQR/1.34) * n^(-1/5), falling back to whichever spread is positive."""
    x = np.asarray(data, dtype=float).ravel()
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    spread = stats.iqr(x) / 1.34
    scale = min(sd, spread) if spread > 0 else sd
    return 0.9 * scale * x.size ** (-0.2)


def kde(data, bandwidth: Optional[float] = None, n_grid: int = GRID_POINTS,
        pad: float = GRID_PAD) -> DensityGrid:
    """Gaussian kernel density estimate on a grid spanning the data range +/- ``pad`` bandwidths."""
    x = np.asarray(data, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientDataError(f"KDE needs at least 2 observations, got {x.size}")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > BANDWIDTH_FLOOR:
        warnings.warn(f"bandwidth {h!r} floored at {BANDWIDTH_FLOOR}")
        logger.warning(f"KDE bandwidth {h!r} floored at {BANDWIDTH_FLOOR}")
        h = BANDWIDTH_FLOOR

    grid = np.linspace(x.min() - pad * h, x.max() + pad * h, n_grid)
    sd = float(np.std(x, ddof=1))
    if sd > 0:
        density = stats.gaussian_kde(x, bw_method=h / sd)(grid)
    else:
        # all observations coincide
        density = stats.norm.pdf(grid, loc=x[0], scale=h)
    return DensityGrid(grid, density, "KDE")


def density_grid_from_rpm(rpm: RpmEstimate, grid) -> DensityGrid:
    grid = np.asarray(grid, dtype=float)
    return DensityGrid(grid, rpm.pdf(grid), "RPM")


def density_grid_from_normal(mu: float, sigma: float, grid) -> DensityGrid:
    grid = np.asarray(grid, dtype=float)
    return DensityGrid(grid, stats.norm.pdf(grid, loc=mu, scale=sigma), "BS")


def mean_square_deviation(candidate: DensityGrid, benchmark: DensityGrid) -> float:
    """Mean squared pointwise difference.

    Grids that differ are both interpolated onto the union of their nodes
    inside the overlap of their ranges.
    """
    if candidate.x.shape == benchmark.x.shape and np.allclose(candidate.x, benchmark.x, rtol=0, atol=1e-12):
        return float(np.mean((candidate.density - benchmark.density) ** 2))
    lo = max(candidate.x[0], benchmark.x[0])
    hi = min(candidate.x[-1], benchmark.x[-1])
    if not lo < hi:
        raise DomainError("density grids have disjoint supports")
    union = np.union1d(candidate.x, benchmark.x)
    union = union[(union >= lo) & (union <= hi)]
    a = np.interp(union, candidate.x, candidate.density)
    b = np.interp(union, benchmark.x, benchmark.density)
    return float(np.mean((a - b) ** 2))


@dataclass(frozen=True, eq=False)
class DensityComparison:
    """KDE benchmark against the DP predictive and the single-normal fit."""

    benchmark: DensityGrid
    rpm: DensityGrid
    bs: DensityGrid
    msd_rpm: float
    msd_bs: float

    def to_frame(self) -> pd.DataFrame:
        return pd.concat([self.benchmark.to_frame(), self.rpm.to_frame(), self.bs.to_frame()],
                         ignore_index=True)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def compare_densities(data, rpm: RpmEstimate, bs: Optional[Tuple[float, float]] = None,
                      bandwidth: Optional[float] = None) -> DensityComparison:
    """MSD of the DP predictive and of a single normal against the KDE of ``data``.

    Args:
        data: observed returns
        rpm: fitted predictive mixture
        bs: (mean, sd) of the single-normal return model; the sample MLE when omitted
        bandwidth: KDE bandwidth (Silverman when omitted)
    """
    x = np.asarray(getattr(data, "returns", data), dtype=float)
    bench = kde(x, bandwidth)
    if bs is None:
        bs = (float(np.mean(x)), float(np.std(x)))
    rpm_grid = density_grid_from_rpm(rpm, bench.x)
    bs_grid = density_grid_from_normal(bs[0], bs[1], bench.x)
    return DensityComparison(bench, rpm_grid, bs_grid,
                             mean_square_deviation(rpm_grid, bench),
                             mean_square_deviation(bs_grid, bench))


def _window(samples, credibility: float):
    if not 0.0 < credibility < 1.0:
        raise DomainError(f"credibility must lie in (0, 1), got {credibility!r}")
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size < HPD_MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {HPD_MIN_SAMPLES} samples, got {s.size}")
    k = min(int(math.ceil(credibility * s.size - 1e-12)), s.size)
    return s, k


def hpd_interval(samples, credibility: float = 0.9) -> Tuple[float, float]:
    """Shortest interval holding ceil(credibility * n) sorted samples."""
    s, k = _window(samples, credibility)
    widths = s[k - 1:] - s[:s.size - k + 1]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + k - 1])


def equal_tailed_interval(samples, credibility: float = 0.9) -> Tuple[float, float]:
    """Central interval holding the same number of samples as ``hpd_interval``."""
    s, k = _window(samples, credibility)
    start = (s.size - k) // 2
    return float(s[start]), float(s[start + k - 1])


def hpd_table(trace: GibbsTrace, credibility: float = 0.9) -> pd.DataFrame:
    """HPD intervals for the predictive expected return and volatility across sweeps."""
    moments = trace.predictive_moments()
    rows = []
    for column in ("expected_return", "volatility"):
        values = moments[column].to_numpy()
        lo, hi = hpd_interval(values, credibility)
        rows.append({"quantity": column, "mean": float(values.mean()),
                     "hpd_lo": lo, "hpd_hi": hi, "credibility": credibility})
    return pd.DataFrame(rows)

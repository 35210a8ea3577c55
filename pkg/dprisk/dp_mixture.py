"""
Truncated stick-breaking Dirichlet-process mixture of normals.

The mixture is fit with a blocked Gibbs sampler under a Normal-Inv-chi^2 base
measure. Each sweep runs five block updates: allocation, concentration alpha,
occupancy, stick fractions and cluster parameters. Post-burn-in sweeps are
averaged into an ``RpmEstimate``, a finite normal mixture that serves as the
predictive distribution of a log-return.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import logsumexp, ndtr, ndtri

from .errors import ConfigError, DimensionError, DomainError, InputError, InsufficientDataError
from .logutil import LoggingMixin
from .market import LogReturnSeries
from .numerics import SeedLike, as_seed_sequence, make_generator

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
STICK_CLAMP = 1.0 - 1e-12
SCALE_FLOOR = 1e-12
MIN_OBSERVATIONS = 10
# normal scores of the cached quantile grid
BRACKET_SCORES = np.linspace(-8.0, 8.0, 1025)


@dataclass
class DpConfig:
    """Hyperparameters and run controls of the blocked Gibbs sampler.

    ``mu0`` and ``sigma0_sq`` default to the sample mean and variance of the
    data being fit; ``H`` defaults to the truncation rule in
    ``truncation_level``.
    """

    a_alpha: float = 2.0
    b_alpha: float = 4.0
    mu0: Optional[float] = None
    kappa0: float = 1.0
    nu0: float = 4.0
    sigma0_sq: Optional[float] = None
    epsilon: float = 0.01
    H: Optional[int] = None
    max_iter: int = 4000
    burn_in: int = 1000
    thin: int = 1
    alpha_window: int = 200
    alpha_tol: float = 1e-3
    seed: Optional[int] = None
    carry_over: bool = True
    log_every: int = 500

    def __post_init__(self):
        for name in ("a_alpha", "b_alpha", "kappa0", "nu0"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be a positive real, got {value!r}")
        if self.sigma0_sq is not None and not self.sigma0_sq > 0:
            raise ConfigError(f"sigma0_sq must be positive, got {self.sigma0_sq!r}")
        if self.mu0 is not None and not math.isfinite(self.mu0):
            raise ConfigError("mu0 must be finite")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        if self.H is not None and (int(self.H) != self.H or self.H < 2):
            raise ConfigError(f"H must be an integer >= 2, got {self.H!r}")
        if self.max_iter < 1 or self.burn_in < 0 or self.burn_in >= self.max_iter:
            raise ConfigError(f"need 0 <= burn_in < max_iter, got burn_in={self.burn_in}, max_iter={self.max_iter}")
        if self.thin < 1 or self.alpha_window < 1 or self.log_every < 1:
            raise ConfigError("thin, alpha_window and log_every must be >= 1")
        if not self.alpha_tol > 0:
            raise ConfigError("alpha_tol must be positive")

    @property
    def expected_alpha(self) -> float:
        return self.a_alpha / self.b_alpha

    def truncation_level(self) -> int:
        """H = max(20, ceil(log eps / log(E[alpha] / (1 + E[alpha]))))."""
        if self.H is not None:
            return int(self.H)
        ea = self.expected_alpha
        needed = math.ceil(math.log(self.epsilon) / math.log(ea / (1.0 + ea)))
        return max(20, needed)

    @property
    def is_resolved(self) -> bool:
        return self.mu0 is not None and self.sigma0_sq is not None

    def resolve(self, data) -> "DpConfig":
        """Fill data-dependent defaults (mu0, sigma0_sq, H)."""
        x = np.asarray(data, dtype=float)
        mu0 = float(np.mean(x)) if self.mu0 is None else self.mu0
        if self.sigma0_sq is None:
            var = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
            sigma0_sq = max(var, SCALE_FLOOR)
        else:
            sigma0_sq = self.sigma0_sq
        return replace(self, mu0=mu0, sigma0_sq=sigma0_sq, H=self.truncation_level())

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict) -> "DpConfig":
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown DpConfig fields: {sorted(unknown)}")
        try:
            return cls(**values)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid DpConfig values {values}: {e}") from e


@dataclass
class GibbsState:
    """Full sampler state at sweep ``iteration`` (0 is the starting value).

    Cluster indices are 0-based. The ``*_n`` arrays hold each cluster's
    Normal-Inv-chi^2 hyperparameters from the previous sweep's update, used
    as the prior when posteriors are carried over.
    """

    iteration: int
    V: np.ndarray
    pi: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    z: np.ndarray
    alpha: float
    n_h: np.ndarray
    kappa_n: np.ndarray = None
    mu_n: np.ndarray = None
    nu_n: np.ndarray = None
    s2_n: np.ndarray = None

    @property
    def H(self) -> int:
        return self.V.size

    @property
    def last_occupied(self) -> int:
        """1-based index of the last occupied cluster (1 when none is occupied)."""
        occupied = np.nonzero(self.n_h)[0]
        return int(occupied[-1]) + 1 if occupied.size else 1

    def check(self, n: Optional[int] = None):
        if abs(self.pi.sum() - 1.0) > 1e-10:
            raise DomainError(f"weights sum to {self.pi.sum()!r}")
        if np.any(self.phi <= 0) or not np.all(np.isfinite(self.phi)):
            raise DomainError("cluster precisions must be positive and finite")
        if n is not None and int(self.n_h.sum()) != n:
            raise DimensionError(f"occupancies sum to {self.n_h.sum()}, expected {n}")


@dataclass(frozen=True, eq=False)
class OccupancySummary:
    """Time-averaged cluster occupancy over the recorded sweeps."""

    mean_occupancy: np.ndarray
    irregular_counts: np.ndarray
    empty_counts: np.ndarray
    n_sweeps: int

    @property
    def irregular_events(self) -> int:
        return int(self.irregular_counts.sum())

    @property
    def empty_events(self) -> int:
        return int(self.empty_counts.sum())

    @property
    def total(self) -> float:
        return float(self.mean_occupancy.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "cluster": np.arange(1, self.mean_occupancy.size + 1),
            "mean_occupancy": self.mean_occupancy,
            "irregular": self.irregular_counts,
            "empty": self.empty_counts,
        })


@dataclass(frozen=True, eq=False)
class GibbsTrace:
    """Per-sweep record of the sampler after burn-in and thinning."""

    iteration: np.ndarray
    alpha: np.ndarray
    occupancy: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    precisions: np.ndarray

    def __len__(self):
        return self.iteration.size

    @property
    def H(self) -> int:
        return self.occupancy.shape[1]

    def to_frame(self) -> pd.DataFrame:
        """One row per sweep: iteration, alpha, then n_h, pi_h, mu_h, phi_h for h = 1..H."""
        columns = {"iteration": self.iteration, "alpha": self.alpha}
        for prefix, block in (("n", self.occupancy), ("pi", self.weights),
                              ("mu", self.means), ("phi", self.precisions)):
            for h in range(self.H):
                columns[f"{prefix}_{h + 1}"] = block[:, h]
        return pd.DataFrame(columns)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    def predictive_moments(self) -> pd.DataFrame:
        """Mean and volatility of each sweep's mixture."""
        mean = np.sum(self.weights * self.means, axis=1)
        second = np.sum(self.weights * (1.0 / self.precisions + self.means ** 2), axis=1)
        vol = np.sqrt(np.maximum(second - mean ** 2, 0.0))
        return pd.DataFrame({"iteration": self.iteration, "expected_return": mean, "volatility": vol})

    def last_cluster_occupancy_rate(self) -> float:
        """Fraction of recorded sweeps in which cluster H holds any observation."""
        if len(self) == 0:
            return 0.0
        return float(np.mean(self.occupancy[:, -1] > 0))


@dataclass(frozen=True, eq=False)
class QuantileBracket:
    """Mixture quantiles on a fixed level grid, used to narrow later inversions."""

    levels: np.ndarray
    values: np.ndarray

    def bounds(self, u) -> Tuple[np.ndarray, np.ndarray]:
        """(lo, hi) around the quantile of each ``u``, one grid cell of margin each side.

        Levels off the grid get an infinite bound on the open side.
        """
        u = np.asarray(u, dtype=float)
        last = self.levels.size - 1
        k = np.searchsorted(self.levels, u, side="right")
        lo_idx, hi_idx = k - 2, k + 1
        lo = np.where(lo_idx >= 0, self.values[np.clip(lo_idx, 0, last)], -np.inf)
        hi = np.where(hi_idx <= last, self.values[np.clip(hi_idx, 0, last)], np.inf)
        return lo, hi


class RpmEstimate:
    """Finite normal mixture sum_h pi_h N(mu_h, 1/phi_h).

    Instances are immutable; the arrays are copied and flagged read-only.
    """

    def __init__(self, weights, means, precisions, iterations: int = 0,
                 alpha_trace=None, converged: bool = True, meta: Optional[Dict] = None):
        w = np.atleast_1d(np.array(weights, dtype=float))
        m = np.atleast_1d(np.array(means, dtype=float))
        p = np.atleast_1d(np.array(precisions, dtype=float))
        if not (w.shape == m.shape == p.shape) or w.ndim != 1 or w.size == 0:
            raise DimensionError("weights, means and precisions must be equal-length 1-D arrays")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise DomainError(f"weights must be non-negative and sum to 1, got sum {w.sum()!r}")
        if np.any(p <= 0) or not np.all(np.isfinite(p)) or not np.all(np.isfinite(m)):
            raise DomainError("precisions must be positive and all parameters finite")
        for a in (w, m, p):
            a.flags.writeable = False
        self.weights = w
        self.means = m
        self.precisions = p
        self.sds = 1.0 / np.sqrt(p)
        self.sds.flags.writeable = False
        self.iterations = int(iterations)
        self.alpha_trace = np.asarray(alpha_trace if alpha_trace is not None else [], dtype=float)
        self.converged = bool(converged)
        self.meta = dict(meta or {})
        self._bracket: Optional[QuantileBracket] = None

    @classmethod
    def from_components(cls, weights, means, sds, **kwargs) -> "RpmEstimate":
        sds = np.atleast_1d(np.asarray(sds, dtype=float))
        if np.any(sds <= 0):
            raise DomainError("component standard deviations must be positive")
        return cls(weights, means, 1.0 / sds ** 2, **kwargs)

    @property
    def n_components(self) -> int:
        return self.weights.size

    def effective_components(self, threshold: float) -> int:
        return int(np.sum(self.weights > threshold))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) * np.sqrt(self.precisions)
        with np.errstate(divide="ignore"):
            terms = np.log(self.weights) + 0.5 * np.log(self.precisions) - 0.5 * LOG_2PI - 0.5 * z ** 2
        return logsumexp(terms, axis=-1)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self.means) / self.sds
        return np.clip(np.sum(self.weights * ndtr(z), axis=-1), 0.0, 1.0)

    def quantile_bracket(self) -> QuantileBracket:
        """The level-grid bracket, computed on first use and cached."""
        if self._bracket is None:
            levels = ndtr(BRACKET_SCORES)
            self._bracket = QuantileBracket(levels, self.quantile(levels))
        return self._bracket

    def quantile(self, u, bisect_iter: int = 200, newton_iter: int = 3,
                 bracket: Optional[QuantileBracket] = None):
        """Generalized inverse of ``cdf``: bracketed bisection, then Newton polish.

        A ``bracket`` (see ``quantile_bracket``) narrows the starting interval
        and saves bisection steps on large batches.
        """
        u = np.asarray(u, dtype=float)
        if np.any(~np.isfinite(u)) or np.any(u <= 0) or np.any(u >= 1):
            raise DomainError("quantile level must lie strictly inside (0, 1)")
        scalar = u.ndim == 0
        u = np.atleast_1d(u)

        # each component's own u-quantile brackets the mixture quantile
        per_component = self.means + self.sds * ndtri(u)[:, None]
        lo = per_component.min(axis=1)
        hi = per_component.max(axis=1)
        if bracket is not None:
            b_lo, b_hi = bracket.bounds(u)
            tight_lo, tight_hi = np.maximum(lo, b_lo), np.minimum(hi, b_hi)
            ok = tight_lo <= tight_hi
            lo, hi = np.where(ok, tight_lo, lo), np.where(ok, tight_hi, hi)
        q = 0.5 * (lo + hi)
        for _ in range(bisect_iter):
            q = 0.5 * (lo + hi)
            below = self.cdf(q) < u
            lo = np.where(below, q, lo)
            hi = np.where(below, hi, q)
            if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(q))):
                break
        q = 0.5 * (lo + hi)
        for _ in range(newton_iter):
            dens = self.pdf(q)
            step = np.where(dens > 0, (self.cdf(q) - u) / np.where(dens > 0, dens, 1.0), 0.0)
            candidate = q - step
            inside = (candidate >= lo) & (candidate <= hi)
            better = np.abs(self.cdf(candidate) - u) < np.abs(self.cdf(q) - u)
            q = np.where(inside & better, candidate, q)
        return float(q[0]) if scalar else q

    def mean(self) -> float:
        return float(np.sum(self.weights * self.means))

    def variance(self) -> float:
        second = np.sum(self.weights * (self.sds ** 2 + self.means ** 2))
        return float(max(second - self.mean() ** 2, 0.0))

    def moment_matched_normal(self) -> Tuple[float, float]:
        """(mean, sd) of the single normal with this mixture's first two moments."""
        return self.mean(), math.sqrt(self.variance())

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.n_components, size=size, p=self.weights)
        return self.means[idx] + self.sds[idx] * rng.standard_normal(size)

    def to_dict(self) -> Dict:
        meta = dict(self.meta)
        meta.update({
            "iterations": self.iterations,
            "converged": self.converged,
            "n_components": self.n_components,
            "alpha_trace": self.alpha_trace.tolist(),
        })
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "precisions": self.precisions.tolist(),
            "meta": meta,
        }

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, payload: Dict) -> "RpmEstimate":
        try:
            meta = dict(payload.get("meta", {}))
            iterations = meta.pop("iterations", 0)
            converged = meta.pop("converged", True)
            alpha_trace = meta.pop("alpha_trace", None)
            meta.pop("n_components", None)
            return cls(payload["weights"], payload["means"], payload["precisions"],
                       iterations=iterations, alpha_trace=alpha_trace,
                       converged=converged, meta=meta)
        except KeyError as e:
            raise InputError(f"RPM payload is missing field {e}") from e

    @classmethod
    def from_json(cls, text: str) -> "RpmEstimate":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RpmEstimate":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def __repr__(self):
        return f"RpmEstimate(n_components={self.n_components}, mean={self.mean():.6g}, converged={self.converged})"


# ---------- Base measure ----------

def _require_resolved(config: DpConfig):
    if not config.is_resolved:
        raise ConfigError("mu0 and sigma0_sq must be set (call DpConfig.resolve(data) first)")


def prior_predictive(config: DpConfig):
    """Location-scale t implied by the Normal-Inv-chi^2 base measure.

    This is the predictive with zero observations: nu0 degrees of freedom,
    location mu0, scale sigma0 * sqrt(1 + 1/kappa0).
    """
    _require_resolved(config)
    scale = math.sqrt(config.sigma0_sq * (1.0 + 1.0 / config.kappa0))
    return stats.t(df=config.nu0, loc=config.mu0, scale=scale)


def _draw_normal_inv_chi2(rng, mu_n, kappa_n, nu_n, s2_n):
    sigma_sq = nu_n * s2_n / rng.chisquare(nu_n)
    mu = rng.normal(mu_n, np.sqrt(sigma_sq / kappa_n))
    return mu, 1.0 / sigma_sq


def draw_base_measure(config: DpConfig, size: int, rng: np.random.Generator):
    """(mu, phi) draws from P0 = N-Inv-chi^2(mu0, sigma0^2/kappa0; nu0, sigma0^2)."""
    _require_resolved(config)
    ones = np.ones(size)
    return _draw_normal_inv_chi2(rng, config.mu0 * ones, config.kappa0 * ones,
                                 config.nu0 * ones, config.sigma0_sq * ones)


# ---------- Block updates ----------

def stick_to_weights(V) -> np.ndarray:
    """pi_h = V_h * prod_{l<h}(1 - V_l); the last weight absorbs the residual."""
    V = np.atleast_1d(np.asarray(V, dtype=float))
    if V.size == 0 or not np.all(np.isfinite(V)) or np.any(V < 0) or np.any(V > 1):
        raise DomainError("stick fractions must lie in [0, 1]")
    if V[-1] != 1.0:
        raise DomainError(f"last stick fraction must be 1, got {V[-1]!r}")
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - V[:-1])))
    pi = V * remaining
    pi[-1] = max(0.0, 1.0 - pi[:-1].sum())
    return pi


def allocation_probabilities(state: GibbsState, data) -> np.ndarray:
    """n x H matrix of normalized allocation probabilities, computed in log space."""
    x = np.asarray(data, dtype=float)
    with np.errstate(divide="ignore"):
        log_pi = np.log(state.pi)
    z = (x[:, None] - state.mu) ** 2 * state.phi
    log_p = log_pi + 0.5 * np.log(state.phi) - 0.5 * LOG_2PI - 0.5 * z
    return np.exp(log_p - logsumexp(log_p, axis=1, keepdims=True))


def allocate_clusters(state: GibbsState, data, rng: np.random.Generator) -> np.ndarray:
    """Draw every assignment from its posterior allocation probabilities."""
    probs = allocation_probabilities(state, data)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    z = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(z, state.H - 1)


def occupancy(z, H: int) -> np.ndarray:
    return np.bincount(np.asarray(z, dtype=int), minlength=H)[:H]


def alpha_posterior(state: GibbsState, config: DpConfig) -> Tuple[float, float]:
    """(shape, rate) of the conditional Gamma for alpha.

    shape = a_alpha + H0max - 1, rate = b_alpha - sum_{h<H0max} log(1 - V_h),
    with H0max the last occupied cluster.
    """
    h0max = state.last_occupied
    V = np.minimum(state.V[:h0max - 1], STICK_CLAMP)
    shape = config.a_alpha + h0max - 1
    rate = config.b_alpha - float(np.sum(np.log1p(-V)))
    return shape, rate


def update_alpha(state: GibbsState, config: DpConfig, rng: np.random.Generator) -> float:
    shape, rate = alpha_posterior(state, config)
    return float(rng.gamma(shape, 1.0 / rate))


def update_sticks(state: GibbsState, rng: np.random.Generator) -> np.ndarray:
    """V_h ~ Beta(1 + n_h, alpha + sum_{k>h} n_k) for h < H; V_H = 1."""
    n_h = np.asarray(state.n_h, dtype=float)
    tail = np.concatenate((np.cumsum(n_h[::-1])[::-1][1:], [0.0]))
    V = np.ones(state.H)
    if state.H > 1:
        V[:-1] = rng.beta(1.0 + n_h[:-1], state.alpha + tail[:-1])
    return V


def _cluster_statistics(x, z, H):
    counts = occupancy(z, H)
    sums = np.bincount(z, weights=x, minlength=H)[:H]
    xbar = np.divide(sums, counts, out=np.zeros(H), where=counts > 0)
    ss = np.bincount(z, weights=(x - xbar[z]) ** 2, minlength=H)[:H]
    return counts, xbar, ss


def update_cluster_params(state: GibbsState, data, config: DpConfig,
                          rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Resample (mu_h, phi_h) for every cluster.

    Empty clusters draw from the base measure. A singly occupied cluster uses
    the base prior on the first sweep and the base prior with the previous
    sweep's kappa afterwards. A cluster with more points updates the previous
    sweep's posterior (when ``config.carry_over``) or the base prior.
    Carried hyperparameters on ``state`` are refreshed in place.
    """
    x = np.asarray(data, dtype=float)
    if not config.is_resolved:
        config = config.resolve(x)
    H = state.H
    counts, xbar, ss = _cluster_statistics(x, np.asarray(state.z, dtype=int), H)

    k0, m0, v0, s0 = (np.full(H, float(v)) for v in (config.kappa0, config.mu0, config.nu0, config.sigma0_sq))
    if state.kappa_n is None:
        state.kappa_n, state.mu_n, state.nu_n, state.s2_n = k0.copy(), m0.copy(), v0.copy(), s0.copy()

    kp, mp, vp, sp = k0.copy(), m0.copy(), v0.copy(), s0.copy()
    if config.carry_over and state.iteration > 1:
        single = counts == 1
        kp[single] = state.kappa_n[single]
        many = counts > 1
        kp[many] = state.kappa_n[many]
        mp[many] = state.mu_n[many]
        vp[many] = state.nu_n[many]
        sp[many] = state.s2_n[many]

    kn = kp + counts
    mn = (kp * mp + counts * xbar) / kn
    vn = vp + counts
    scatter = vp * sp + ss + (kp * counts / kn) * (xbar - mp) ** 2
    sn = np.maximum(scatter / vn, SCALE_FLOOR)

    mu, phi = _draw_normal_inv_chi2(rng, mn, kn, vn, sn)

    empty = counts == 0
    state.kappa_n = np.where(empty, k0, kn)
    state.mu_n = np.where(empty, m0, mn)
    state.nu_n = np.where(empty, v0, vn)
    state.s2_n = np.where(empty, s0, sn)
    return mu, phi


# ---------- Summaries ----------

def posterior_membership_curve(traces) -> OccupancySummary:
    """Average occupancy per cluster across recorded sweeps.

    Accepts a ``GibbsTrace`` or a (sweeps x H) occupancy array.
    """
    occ = np.asarray(getattr(traces, "occupancy", traces), dtype=float)
    if occ.ndim == 1:
        occ = occ[None, :]
    if occ.ndim != 2 or occ.shape[0] < 1:
        raise InsufficientDataError("need at least one recorded sweep")
    return OccupancySummary(
        mean_occupancy=occ.mean(axis=0),
        irregular_counts=(occ == 1).sum(axis=0),
        empty_counts=(occ == 0).sum(axis=0),
        n_sweeps=occ.shape[0],
    )


def predictive_density(rpm: RpmEstimate, x):
    return rpm.pdf(x)


def predictive_cdf(rpm: RpmEstimate, x):
    return rpm.cdf(x)


def predictive_quantile(rpm: RpmEstimate, gamma):
    return rpm.quantile(gamma)


# ---------- Sampler ----------

def _as_array(data) -> np.ndarray:
    x = data.returns if isinstance(data, LogReturnSeries) else np.asarray(data, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    if x.size < MIN_OBSERVATIONS:
        raise InsufficientDataError(f"need at least {MIN_OBSERVATIONS} observations, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("data contains non-finite values")
    return x


class BlockedGibbsSampler(LoggingMixin):
    """Blocked Gibbs sampler for the truncated DP normal mixture."""

    def __init__(self, config: Optional[DpConfig] = None, enable_logging: bool = False,
                 verbose: bool = False, name: str = "gibbs"):
        self.config = config or DpConfig()
        self.enable_logging = enable_logging
        self.verbose = verbose
        self.name = name
        self._setup_logging(name)
        self.state: Optional[GibbsState] = None

    def initial_state(self, x: np.ndarray, config: DpConfig, rng: np.random.Generator) -> GibbsState:
        """All observations start in cluster 1; the other clusters draw from the base."""
        H = config.H
        z = np.zeros(x.size, dtype=int)
        n_h = occupancy(z, H)
        alpha = config.expected_alpha
        V = update_sticks(GibbsState(0, np.ones(H), None, None, None, z, alpha, n_h), rng)
        mu, phi = draw_base_measure(config, H, rng)
        state = GibbsState(0, V, stick_to_weights(V), mu, phi, z, alpha, n_h)
        mu, phi = update_cluster_params(state, x, config, rng)
        state.mu, state.phi = mu, phi
        # starting values carry no evidence forward
        state.kappa_n = state.mu_n = state.nu_n = state.s2_n = None
        return state

    def sweep(self, state: GibbsState, x: np.ndarray, config: DpConfig, rng: np.random.Generator):
        state.iteration += 1
        state.z = allocate_clusters(state, x, rng)
        state.n_h = occupancy(state.z, state.H)
        state.alpha = update_alpha(state, config, rng)
        state.V = update_sticks(state, rng)
        state.pi = stick_to_weights(state.V)
        state.mu, state.phi = update_cluster_params(state, x, config, rng)
        return state

    def run(self, data) -> Tuple[RpmEstimate, OccupancySummary, GibbsTrace]:
        """Run the chain until alpha stabilizes or ``max_iter`` sweeps.

        Returns:
            (RpmEstimate, OccupancySummary, GibbsTrace); non-convergence is
            reported through ``RpmEstimate.converged``
        """
        x = _as_array(data)
        asset = data.asset_id if isinstance(data, LogReturnSeries) else self.name
        config = self.config.resolve(x)
        rng = make_generator(config.seed)
        state = self.initial_state(x, config, rng)
        self.state = state
        self._log_info(f"[{asset}] starting blocked Gibbs: n={x.size}, H={config.H}, max_iter={config.max_iter}")

        H = config.H
        capacity = (config.max_iter - config.burn_in) // config.thin + 1
        rec_iter = np.empty(capacity, dtype=int)
        rec_alpha = np.empty(capacity)
        rec_occ = np.empty((capacity, H), dtype=int)
        rec_pi = np.empty((capacity, H))
        rec_mu = np.empty((capacity, H))
        rec_phi = np.empty((capacity, H))
        k = 0

        window = np.empty(config.alpha_window)
        filled = 0
        previous_mean = None
        converged = False

        for m in range(1, config.max_iter + 1):
            self.sweep(state, x, config, rng)
            if state.iteration % config.log_every == 0:
                self._log_info(
                    f"[{asset}] sweep {m}: alpha={state.alpha:.4f}, occupied={int(np.count_nonzero(state.n_h))}"
                )
            if m <= config.burn_in:
                continue

            window[filled] = state.alpha
            filled += 1
            if (m - config.burn_in - 1) % config.thin == 0:
                rec_iter[k], rec_alpha[k], rec_occ[k] = m, state.alpha, state.n_h
                rec_pi[k], rec_mu[k], rec_phi[k] = state.pi, state.mu, state.phi
                k += 1

            if filled == config.alpha_window:
                # consecutive non-overlapping windows
                window_mean = float(window.mean())
                filled = 0
                if previous_mean is not None and abs(window_mean - previous_mean) <= config.alpha_tol * abs(previous_mean):
                    converged = True
                    self._log_info(f"[{asset}] alpha stabilized at sweep {m} (window mean {window_mean:.4f})")
                    break
                previous_mean = window_mean

        if not converged:
            self._log_warning(f"[{asset}] alpha did not stabilize within {config.max_iter} sweeps")

        trace = GibbsTrace(rec_iter[:k], rec_alpha[:k], rec_occ[:k], rec_pi[:k], rec_mu[:k], rec_phi[:k])
        rpm = build_rpm(trace, config, converged=converged, meta={"asset_id": asset, "n_obs": int(x.size)})
        summary = posterior_membership_curve(trace)
        last_rate = trace.last_cluster_occupancy_rate()
        if last_rate >= config.epsilon:
            self._log_warning(f"[{asset}] cluster H occupied in {last_rate:.2%} of sweeps; consider a larger H")
        self._log_info(f"[{asset}] kept {rpm.n_components} components after {state.iteration} sweeps")
        return rpm, summary, trace


def build_rpm(trace: GibbsTrace, config: DpConfig, converged: bool = True,
              meta: Optional[Dict] = None) -> RpmEstimate:
    """Index-wise posterior means of (pi, mu, phi); components below epsilon/H dropped."""
    if len(trace) == 0:
        raise InsufficientDataError("no post-burn-in sweeps recorded")
    H = trace.H
    weights = trace.weights.mean(axis=0)
    means = trace.means.mean(axis=0)
    precisions = trace.precisions.mean(axis=0)
    keep = weights >= config.epsilon / H
    if not np.any(keep):
        keep = weights == weights.max()
    weights = weights[keep] / weights[keep].sum()
    meta = dict(meta or {})
    meta.update({"truncation": H, "alpha_mean": float(trace.alpha.mean())})
    return RpmEstimate(weights, means[keep], precisions[keep],
                       iterations=int(trace.iteration[-1]), alpha_trace=trace.alpha,
                       converged=converged, meta=meta)


def run_blocked_gibbs(data, config: Optional[DpConfig] = None,
                      enable_logging: bool = False) -> Tuple[RpmEstimate, OccupancySummary, GibbsTrace]:
    """Fit the DP mixture to a return series; see ``BlockedGibbsSampler.run``."""
    name = data.asset_id if isinstance(data, LogReturnSeries) else "gibbs"
    return BlockedGibbsSampler(config, enable_logging=enable_logging, name=name).run(data)


def run_chains(data, config: Optional[DpConfig] = None, n_chains: int = 2,
               n_workers: Optional[int] = None, seed: SeedLike = None) -> List[Tuple[RpmEstimate, OccupancySummary, GibbsTrace]]:
    """Independent chains on spawned seed substreams, run on a thread pool."""
    config = config or DpConfig()
    if n_chains < 1:
        raise ConfigError("n_chains must be >= 1")
    root = as_seed_sequence(config.seed if seed is None else seed)
    seeds = [int(child.generate_state(1)[0]) for child in root.spawn(n_chains)]
    configs = [replace(config, seed=s) for s in seeds]
    with ThreadPoolExecutor(max_workers=n_workers or n_chains) as pool:
        return list(pool.map(lambda c: run_blocked_gibbs(data, c), configs))

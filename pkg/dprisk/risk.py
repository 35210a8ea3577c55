"""
Distortion risk measures evaluated as Choquet integrals.

Conventions:
    * gamma is a tail probability (0.01 for the 1% tables).
    * ``var`` and ``esf`` are lower-tail RETURN values: the gamma-quantile and
      the average return at or below it. Internally both distort the survival
      function of the loss L = -X and negate the result.
    * ``wang_measure`` is the Choquet integral of X itself under
      g_r(u) = Phi(Phi^-1(u) + r), so N(mu, sigma^2) maps to mu + r*sigma.
      Reports show the risk-adjusted return -rho_{g_r}(-X) = mu - r*sigma.
"""

import json
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import integrate
from scipy.special import ndtr, ndtri

from .dp_mixture import RpmEstimate
from .errors import DomainError, InsufficientDataError, IntegrationError

logger = logging.getLogger(__name__)

SUPPORT_TAIL = 1e-9
MIN_QUAD_NODES = 64
DEFAULT_QUAD_NODES = 4096
MAX_QUAD_NODES = 2 ** 20
CONVENTION_NOTE = (
    "Values are log-returns in percent. VaR is the lower gamma-quantile of the "
    "return, ESF the average return at or below it, Wang the risk-adjusted "
    "return -rho_g(-X) under g_r(u) = Phi(Phi^-1(u) + r)."
)


def _check_gamma(gamma: float):
    if not (isinstance(gamma, (int, float, np.floating)) and 0.0 < gamma < 1.0):
        raise DomainError(f"gamma must lie in (0, 1), got {gamma!r}")


# ---------- Loss distributions ----------

class LossDistribution(ABC):
    """A univariate distribution exposing cdf, quantile and a support hint."""

    @abstractmethod
    def cdf(self, x):
        pass

    @abstractmethod
    def quantile(self, p):
        pass

    @abstractmethod
    def mean(self) -> float:
        pass

    @abstractmethod
    def negate(self) -> "LossDistribution":
        pass

    @abstractmethod
    def shift(self, c: float) -> "LossDistribution":
        pass

    @abstractmethod
    def scale(self, lam: float) -> "LossDistribution":
        pass

    def survival(self, x):
        return 1.0 - self.cdf(x)

    def support(self) -> Tuple[float, float]:
        """Interval carrying all but 2e-9 of the probability mass."""
        return float(self.quantile(SUPPORT_TAIL)), float(self.quantile(1.0 - SUPPORT_TAIL))

    def tail_mean(self, gamma: float) -> float:
        """(1/gamma) * integral_0^gamma quantile(u) du."""
        value, abserr = integrate.quad(lambda u: float(self.quantile(u)), 0.0, gamma, limit=200)
        if not math.isfinite(value):
            raise IntegrationError("tail average did not converge", {"gamma": gamma, "abserr": abserr})
        return value / gamma


def _check_scale(lam: float):
    if not lam > 0:
        raise DomainError(f"scale factor must be positive, got {lam!r}")


class NormalLoss(LossDistribution):
    """Single normal N(mu, sigma^2)."""

    def __init__(self, mu: float, sigma: float):
        if not sigma > 0 or not math.isfinite(sigma) or not math.isfinite(mu):
            raise DomainError(f"need finite mu and sigma > 0, got mu={mu!r}, sigma={sigma!r}")
        self.mu = float(mu)
        self.sigma = float(sigma)

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def survival(self, x):
        return ndtr((self.mu - np.asarray(x, dtype=float)) / self.sigma)

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(p <= 0) or np.any(p >= 1):
            raise DomainError("quantile level must lie strictly inside (0, 1)")
        q = self.mu + self.sigma * ndtri(p)
        return float(q) if q.ndim == 0 else q

    def mean(self) -> float:
        return self.mu

    def negate(self):
        return NormalLoss(-self.mu, self.sigma)

    def shift(self, c):
        return NormalLoss(self.mu + c, self.sigma)

    def scale(self, lam):
        _check_scale(lam)
        return NormalLoss(self.mu * lam, self.sigma * lam)

    def __repr__(self):
        return f"NormalLoss(mu={self.mu:.6g}, sigma={self.sigma:.6g})"


class MixtureLoss(LossDistribution):
    """Loss contract backed by an RpmEstimate."""

    def __init__(self, rpm: RpmEstimate):
        self.rpm = rpm

    def cdf(self, x):
        return self.rpm.cdf(x)

    def survival(self, x):
        z = (np.asarray(x, dtype=float)[..., None] - self.rpm.means) / self.rpm.sds
        return np.sum(self.rpm.weights * ndtr(-z), axis=-1)

    def quantile(self, p):
        return self.rpm.quantile(p)

    def mean(self) -> float:
        return self.rpm.mean()

    def _rebuild(self, means, precisions):
        return MixtureLoss(RpmEstimate(self.rpm.weights, means, precisions,
                                       iterations=self.rpm.iterations, converged=self.rpm.converged,
                                       meta=self.rpm.meta))

    def negate(self):
        return self._rebuild(-self.rpm.means, self.rpm.precisions)

    def shift(self, c):
        return self._rebuild(self.rpm.means + c, self.rpm.precisions)

    def scale(self, lam):
        _check_scale(lam)
        return self._rebuild(self.rpm.means * lam, self.rpm.precisions / lam ** 2)

    def moment_matched(self) -> NormalLoss:
        return NormalLoss(*self.rpm.moment_matched_normal())

    def __repr__(self):
        return f"MixtureLoss({self.rpm!r})"


class EmpiricalLoss(LossDistribution):
    """Empirical distribution of a sample; quantiles use the inverted-CDF rule x_(ceil(n*p))."""

    def __init__(self, samples):
        x = np.sort(np.asarray(samples, dtype=float).ravel())
        if x.size == 0:
            raise InsufficientDataError("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise DomainError("samples must be finite")
        self.sorted = x
        self.sorted.flags.writeable = False

    @property
    def n(self) -> int:
        return self.sorted.size

    def cdf(self, x):
        return np.searchsorted(self.sorted, np.asarray(x, dtype=float), side="right") / self.n

    def quantile(self, p):
        p = np.asarray(p, dtype=float)
        if np.any(p <= 0) or np.any(p >= 1):
            raise DomainError("quantile level must lie strictly inside (0, 1)")
        k = np.maximum(np.ceil(self.n * p - 1e-12).astype(int), 1)
        q = self.sorted[k - 1]
        return float(q) if q.ndim == 0 else q

    def support(self):
        return float(self.sorted[0]), float(self.sorted[-1])

    def mean(self) -> float:
        return float(self.sorted.mean())

    def tail_mean(self, gamma: float) -> float:
        """Exact lower-tail average of the step quantile function."""
        k = max(int(math.ceil(self.n * gamma - 1e-12)), 1)
        head = self.sorted[:k - 1].sum() / self.n
        return float((head + self.sorted[k - 1] * (gamma - (k - 1) / self.n)) / gamma)

    def choquet(self, g: "DistortionFunction") -> float:
        """Exact Choquet integral: sum_i x_(i) * [g(S_{i-1}) - g(S_i)], S_i = (n - i)/n."""
        levels = (self.n - np.arange(self.n + 1)) / self.n
        gv = g(levels)
        return float(np.dot(self.sorted, gv[:-1] - gv[1:]))

    def negate(self):
        return EmpiricalLoss(-self.sorted)

    def shift(self, c):
        return EmpiricalLoss(self.sorted + c)

    def scale(self, lam):
        _check_scale(lam)
        return EmpiricalLoss(self.sorted * lam)

    def __repr__(self):
        return f"EmpiricalLoss(n={self.n})"


def as_loss_distribution(obj) -> LossDistribution:
    """Wrap an RpmEstimate or a raw sample in the loss contract."""
    if isinstance(obj, LossDistribution):
        return obj
    if isinstance(obj, RpmEstimate):
        return MixtureLoss(obj)
    return EmpiricalLoss(obj)


def bs_loss_distribution(mu: float, sigma: float, T: float = 1.0) -> NormalLoss:
    """Single-GBM log-return over horizon T: N((mu - sigma^2/2) T, sigma^2 T)."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    if not T > 0:
        raise DomainError(f"T must be positive, got {T!r}")
    return NormalLoss((mu - 0.5 * sigma ** 2) * T, sigma * math.sqrt(T))


# ---------- Distortions ----------

@dataclass(frozen=True)
class DistortionFunction:
    """Increasing g: [0, 1] -> [0, 1] with g(0) = 0 and g(1) = 1.

    ``breakpoints`` lists the u values where g has a kink or a jump; the
    quadrature splits its range there.
    """

    kind: str
    params: Dict[str, float] = field(default_factory=dict)
    fn: Optional[Callable] = field(default=None, repr=False, compare=False)
    breakpoints: Tuple[float, ...] = ()

    def __call__(self, u):
        return self.fn(np.asarray(u, dtype=float))

    @classmethod
    def identity(cls) -> "DistortionFunction":
        return cls("identity", {}, lambda u: np.clip(u, 0.0, 1.0))

    @classmethod
    def var(cls, gamma: float) -> "DistortionFunction":
        """Step distortion 1{u >= gamma}."""
        _check_gamma(gamma)
        return cls("VaR", {"gamma": gamma}, lambda u: (u >= gamma).astype(float), (gamma,))

    @classmethod
    def cvar(cls, gamma: float) -> "DistortionFunction":
        """Capped linear distortion min(u / gamma, 1)."""
        _check_gamma(gamma)
        return cls("CVaR", {"gamma": gamma}, lambda u: np.minimum(u / gamma, 1.0), (gamma,))

    @classmethod
    def wang(cls, r: float) -> "DistortionFunction":
        if not math.isfinite(r):
            raise DomainError("market price of risk r must be finite")
        return cls("Wang", {"r": r}, lambda u: ndtr(ndtri(np.clip(u, 0.0, 1.0)) + r))

    @classmethod
    def custom(cls, fn: Callable, name: str = "custom", breakpoints: Sequence[float] = (),
               grid: int = 1001) -> "DistortionFunction":
        g = cls(name, {}, fn, tuple(sorted(breakpoints)))
        u = np.linspace(0.0, 1.0, grid)
        v = g(u)
        if abs(v[0]) > 1e-12 or abs(v[-1] - 1.0) > 1e-12:
            raise DomainError(f"distortion {name} must satisfy g(0)=0 and g(1)=1")
        if np.any(np.diff(v) < -1e-12):
            raise DomainError(f"distortion {name} must be nondecreasing")
        return g

    def dual(self) -> "DistortionFunction":
        """g~(u) = 1 - g(1 - u)."""
        fn = self.fn
        return DistortionFunction(f"dual({self.kind})", dict(self.params),
                                  lambda u: 1.0 - fn(1.0 - u),
                                  tuple(sorted(1.0 - b for b in self.breakpoints)))


def classify_distortion(g: DistortionFunction, grid: int = 1001, tol: float = 1e-12) -> Dict[str, bool]:
    """Numerical shape classification of g on a uniform grid.

    complete := strictly increasing; exhaustive := concave and strictly increasing.
    """
    u = np.linspace(0.0, 1.0, grid)
    v = g(u)
    strictly_increasing = bool(np.all(np.diff(v) > tol))
    concave = bool(np.all(np.diff(v, n=2) <= tol))
    return {
        "strictly_increasing": strictly_increasing,
        "concave": concave,
        "complete": strictly_increasing,
        "exhaustive": concave and strictly_increasing,
    }


# ---------- Choquet integral ----------

def _midpoint(f, a: float, b: float, n: int) -> float:
    h = (b - a) / n
    return h * float(np.sum(f(a + h * (np.arange(n) + 0.5))))


def _richardson_segment(f, a: float, b: float, n: int, max_nodes: int, rel_tol: float, abs_tol: float):
    """Composite midpoint sums with node doubling and Richardson extrapolation on [a, b].

    Endpoints are never evaluated, so a jump of g exactly at a cut point
    does not pollute the sum.
    """
    coarse = _midpoint(f, a, b, n)
    previous = None
    while True:
        n *= 2
        fine = _midpoint(f, a, b, n)
        extrapolated = fine + (fine - coarse) / 3.0
        if previous is not None:
            err = abs(extrapolated - previous)
            if err <= abs_tol + rel_tol * abs(extrapolated):
                return extrapolated, n, err
        if n >= max_nodes:
            raise IntegrationError("Choquet quadrature did not converge",
                                   {"a": a, "b": b, "nodes": n,
                                    "last_change": None if previous is None else abs(extrapolated - previous)})
        previous = extrapolated
        coarse = fine


def choquet_integral(dist, g: DistortionFunction, quad: int = DEFAULT_QUAD_NODES,
                     rel_tol: float = 1e-11, abs_tol: float = 1e-12,
                     max_nodes: int = MAX_QUAD_NODES) -> float:
    """rho_g(X) = int_0^inf g(P(X>x)) dx - int_-inf^0 (1 - g(P(X>x))) dx.

    On a support hint [lo, hi] this equals lo + int_lo^hi g(S(x)) dx. The range
    is split where g has breakpoints, and each piece is integrated by
    extrapolated midpoint sums starting from ``quad`` intervals.
    """
    if quad < MIN_QUAD_NODES:
        raise DomainError(f"quad must be >= {MIN_QUAD_NODES}, got {quad}")
    dist = as_loss_distribution(dist)
    if isinstance(dist, EmpiricalLoss):
        return dist.choquet(g)

    try:
        lo, hi = dist.support()
    except (TypeError, ValueError) as e:
        raise IntegrationError(f"support hint unavailable: {e}", {"distribution": repr(dist)}) from e
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise IntegrationError("support hint is not a finite interval", {"lo": lo, "hi": hi})
    if hi == lo:
        return lo

    cuts = {lo, hi}
    for b in g.breakpoints:
        if 0.0 < b < 1.0:
            x = float(dist.quantile(1.0 - b))
            if lo < x < hi:
                cuts.add(x)
    cuts = sorted(cuts)

    def integrand(x):
        return g(dist.survival(x))

    total = lo
    nodes = 0
    for a, b in zip(cuts[:-1], cuts[1:]):
        value, used, _ = _richardson_segment(integrand, a, b, quad, max_nodes, rel_tol, abs_tol * (b - a))
        total += value
        nodes += used
    if not math.isfinite(total):
        raise IntegrationError("Choquet integral is not finite", {"lo": lo, "hi": hi, "nodes": nodes})
    return float(total)


# ---------- Named measures ----------

def var(dist, gamma: float) -> float:
    """Lower gamma-quantile of the return distribution."""
    _check_gamma(gamma)
    return float(as_loss_distribution(dist).quantile(gamma))


def esf_routes(dist, gamma: float, quad: int = DEFAULT_QUAD_NODES) -> Tuple[float, float]:
    """ESF two ways: (tail average of quantiles, negated Choquet of -X under the CVaR distortion)."""
    _check_gamma(gamma)
    dist = as_loss_distribution(dist)
    tail = dist.tail_mean(gamma)
    choquet = -choquet_integral(dist.negate(), DistortionFunction.cvar(gamma), quad)
    return tail, choquet


def esf(dist, gamma: float, quad: int = DEFAULT_QUAD_NODES, check: bool = False, tol: float = 1e-4) -> float:
    """Average return at or below the gamma-quantile.

    With ``check`` the Choquet route is evaluated too and a disagreement
    beyond ``tol`` is logged.
    """
    _check_gamma(gamma)
    dist = as_loss_distribution(dist)
    if not check:
        return dist.tail_mean(gamma)
    tail, choquet = esf_routes(dist, gamma, quad)
    if abs(tail - choquet) > tol:
        logger.warning(f"ESF routes disagree at gamma={gamma}: tail={tail:.8g}, choquet={choquet:.8g}")
    return tail


def wang_measure(dist, r: float, quad: int = DEFAULT_QUAD_NODES) -> float:
    """Choquet integral of X under the Wang transform g_r."""
    return choquet_integral(dist, DistortionFunction.wang(r), quad)


def wang_adjusted_return(dist, r: float, quad: int = DEFAULT_QUAD_NODES) -> float:
    """-rho_{g_r}(-X): the return after loading the lower tail by r."""
    return -wang_measure(as_loss_distribution(dist).negate(), r, quad)


def risk_profile(dist, gammas: Sequence[float], r: float, quad: int = DEFAULT_QUAD_NODES) -> Dict[str, float]:
    """VaR and ESF at every gamma plus the Wang row, keyed by report label."""
    dist = as_loss_distribution(dist)
    out = {}
    for gamma in gammas:
        out[f"VaR ({gamma * 100:g}%)"] = var(dist, gamma)
    for gamma in gammas:
        out[f"ESF ({gamma * 100:g}%)"] = esf(dist, gamma, quad)
    out[f"Wang (r={r:g})"] = wang_adjusted_return(dist, r, quad)
    return out


# ---------- Report ----------

@dataclass
class RiskReport:
    """Risk values per asset column; rows are '<source> <measure> (<level>)'.

    ``values`` holds raw return units; rendering converts to percent.
    """

    gammas: List[float]
    r: float
    values: Dict[str, Dict[str, float]] = field(default_factory=dict)
    note: str = CONVENTION_NOTE

    @property
    def columns(self) -> List[str]:
        return list(self.values)

    def add(self, column: str, source: str, profile: Mapping[str, float]):
        col = self.values.setdefault(column, {})
        for label, value in profile.items():
            col[f"{source} {label}"] = float(value)

    def get(self, column: str, source: str, measure: str, level: float) -> float:
        if measure == "Wang":
            key = f"{source} Wang (r={level:g})"
        else:
            key = f"{source} {measure} ({level * 100:g}%)"
        return self.values[column][key]

    def to_frame(self, percent: bool = True) -> pd.DataFrame:
        df = pd.DataFrame(self.values)
        return df * 100.0 if percent else df

    def violations(self) -> List[str]:
        """(column, row) pairs where ESF exceeds VaR at the same level and source."""
        bad = []
        for column, rows in self.values.items():
            for key, value in rows.items():
                if " ESF (" in key:
                    partner = key.replace(" ESF (", " VaR (")
                    if partner in rows and value > rows[partner] + 1e-12:
                        bad.append(f"{column}: {key}")
        return bad

    def to_dict(self) -> Dict:
        return {
            "gammas": list(self.gammas),
            "r": self.r,
            "units": "percent",
            "note": self.note,
            "values": {c: {k: v * 100.0 for k, v in rows.items()} for c, rows in self.values.items()},
        }

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, payload: Mapping) -> "RiskReport":
        """Inverse of ``to_dict`` (percent values back to return units)."""
        values = {c: {k: float(v) / 100.0 for k, v in rows.items()} for c, rows in payload["values"].items()}
        return cls(list(payload["gammas"]), float(payload["r"]), values, payload.get("note", CONVENTION_NOTE))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RiskReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_text(self, path: Optional[Union[str, Path]] = None, digits: int = 2) -> str:
        body = self.to_frame().to_string(float_format=lambda v: f"{v:.{digits}f}")
        text = f"# {self.note}\n{body}\n"
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        return text


def build_risk_report(empirical: Mapping[str, object], estimated: Mapping[str, object],
                      gammas: Sequence[float] = (0.01, 0.05), r: float = 0.5,
                      estimated_label: str = "Copula Estimated",
                      quad: int = DEFAULT_QUAD_NODES) -> RiskReport:
    """Empirical vs model-estimated risk table.

    Args:
        empirical: column -> observed return sample
        estimated: column -> LossDistribution, RpmEstimate or simulated sample
        gammas: tail probabilities
        r: Wang market price of risk
        estimated_label: row prefix of the model rows

    Returns:
        RiskReport with one column per key, empirical columns first in order
    """
    for gamma in gammas:
        _check_gamma(gamma)
    report = RiskReport(list(gammas), float(r))
    columns = list(dict.fromkeys(list(empirical) + list(estimated)))
    for column in columns:
        if column in empirical:
            report.add(column, "Empirical", risk_profile(empirical[column], gammas, r, quad))
        if column in estimated:
            report.add(column, estimated_label, risk_profile(estimated[column], gammas, r, quad))
    for issue in report.violations():
        logger.warning(f"ESF above VaR in {issue}")
    return report

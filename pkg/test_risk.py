#!/usr/bin/env python3
"""
Tests for the distortion risk measures and the risk report.
"""

import json
import math
import os
import sys

import numpy as np
import pytest
from scipy import stats

sys.path.insert(0, os.path.abspath('.'))

from dprisk.dp_mixture import RpmEstimate
from dprisk.errors import DomainError
from dprisk.risk import (
    DistortionFunction, EmpiricalLoss, LossDistribution, MixtureLoss, NormalLoss, RiskReport, bs_loss_distribution,
    build_risk_report, choquet_integral, classify_distortion, esf, esf_routes, risk_profile, var,
    wang_adjusted_return, wang_measure,
)

STD_NORMAL = NormalLoss(0.0, 1.0)
HEAVY_MIX = RpmEstimate.from_components([0.9, 0.1], [0.001, -0.004], [0.01, 0.04])


class UniformLoss(LossDistribution):
    """Uniform(a, b) through the loss contract, used only as a test distribution."""

    def __init__(self, a=0.0, b=1.0):
        self.a, self.b = a, b

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def survival(self, x):
        return 1.0 - self.cdf(x)

    def quantile(self, p):
        q = self.a + (self.b - self.a) * np.asarray(p, dtype=float)
        return float(q) if q.ndim == 0 else q

    def mean(self):
        return 0.5 * (self.a + self.b)

    def negate(self):
        return UniformLoss(-self.b, -self.a)

    def shift(self, c):
        return UniformLoss(self.a + c, self.b + c)

    def scale(self, lam):
        return UniformLoss(self.a * lam, self.b * lam)

    def support(self):
        return self.a, self.b


TEST_DISTRIBUTIONS = [
    STD_NORMAL,
    NormalLoss(3.0, 2.0),
    MixtureLoss(HEAVY_MIX),
    MixtureLoss(RpmEstimate.from_components([0.5, 0.5], [-2.0, 2.0], [0.5, 0.5])),
    UniformLoss(),
]


# ---------- Choquet and named measures ----------

@pytest.mark.parametrize("dist", TEST_DISTRIBUTIONS)
def test_identity_distortion_gives_mean(dist):
    assert choquet_integral(dist, DistortionFunction.identity()) == pytest.approx(dist.mean(), abs=1e-6)


def test_normal_var_and_esf_oracles():
    assert var(STD_NORMAL, 0.01) == pytest.approx(-2.3263, abs=1e-4)
    assert var(STD_NORMAL, 0.01) == pytest.approx(stats.norm.ppf(0.01), abs=1e-6)
    expected = -stats.norm.pdf(stats.norm.ppf(0.01)) / 0.01
    assert esf(STD_NORMAL, 0.01) == pytest.approx(expected, abs=1e-4)
    assert esf(STD_NORMAL, 0.01) == pytest.approx(-2.6652, abs=1e-4)


def test_var_distortion_matches_quantile():
    for dist in TEST_DISTRIBUTIONS[:4]:
        # the step distortion on the loss picks the (1 - gamma) loss quantile
        via_choquet = -choquet_integral(dist.negate(), DistortionFunction.var(0.05))
        assert via_choquet == pytest.approx(var(dist, 0.05), abs=1e-5)


def test_uniform_esf():
    assert esf(UniformLoss(), 0.1) == pytest.approx(0.05, abs=1e-10)


@pytest.mark.parametrize("dist", TEST_DISTRIBUTIONS)
def test_esf_routes_agree(dist):
    tail, choquet = esf_routes(dist, 0.01)
    assert tail == pytest.approx(choquet, abs=1e-4)
    assert esf(dist, 0.01, check=True) <= var(dist, 0.01)


@pytest.mark.parametrize("r", [0.0, 0.5, 1.0])
def test_wang_normal_shift(r):
    dist = NormalLoss(0.3, 1.5)
    assert wang_measure(dist, r) == pytest.approx(0.3 + r * 1.5, abs=1e-5)
    assert wang_adjusted_return(dist, r) == pytest.approx(0.3 - r * 1.5, abs=1e-5)


def test_domain_errors():
    with pytest.raises(DomainError):
        var(STD_NORMAL, 0.0)
    with pytest.raises(DomainError):
        esf(STD_NORMAL, 1.0)
    with pytest.raises(DomainError):
        choquet_integral(STD_NORMAL, DistortionFunction.identity(), quad=8)
    with pytest.raises(DomainError):
        bs_loss_distribution(0.1, 0.0)
    with pytest.raises(DomainError):
        bs_loss_distribution(0.1, 0.2, T=0.0)


def test_bs_loss_distribution():
    sigma = 0.3
    zero = bs_loss_distribution(sigma ** 2 / 2, sigma)
    assert zero.mean() == pytest.approx(0.0, abs=1e-15)
    dist = bs_loss_distribution(0.1, 0.2, T=2.0)
    assert dist.quantile(0.5) == pytest.approx((0.1 - 0.02) * 2.0)
    assert dist.quantile(0.01) == pytest.approx(0.16 + 0.2 * math.sqrt(2.0) * stats.norm.ppf(0.01), abs=1e-10)


# ---------- Coherence properties ----------

MEASURES = [
    lambda d: var(d, 0.01),
    lambda d: esf(d, 0.01),
    lambda d: wang_measure(d, 0.5),
]


@pytest.mark.parametrize("measure", MEASURES)
def test_translation_invariance(measure):
    dist = MixtureLoss(HEAVY_MIX)
    assert measure(dist.shift(0.02)) == pytest.approx(measure(dist) + 0.02, abs=1e-6)


@pytest.mark.parametrize("measure", MEASURES)
def test_positive_homogeneity(measure):
    dist = MixtureLoss(HEAVY_MIX)
    assert measure(dist.scale(3.0)) == pytest.approx(3.0 * measure(dist), rel=1e-5, abs=1e-9)


def test_distortion_dominance():
    loss = MixtureLoss(HEAVY_MIX).negate()
    low = choquet_integral(loss, DistortionFunction.identity())
    mid = choquet_integral(loss, DistortionFunction.wang(0.5))
    high = choquet_integral(loss, DistortionFunction.cvar(0.05))
    assert low <= mid <= high


def test_mixture_differs_from_moment_matched_normal():
    mixture = MixtureLoss(HEAVY_MIX)
    normal = mixture.moment_matched()
    assert normal.mean() == pytest.approx(mixture.mean())
    assert abs(var(mixture, 0.01) - var(normal, 0.01)) > 1e-3
    assert abs(esf(mixture, 0.01) - esf(normal, 0.01)) > 1e-3


def test_esf_subadditive_on_simulated_pairs():
    rng = np.random.default_rng(21)
    n = 100000
    a = HEAVY_MIX.sample(n, rng)
    b = HEAVY_MIX.sample(n, rng)
    joint = esf(EmpiricalLoss(0.5 * a + 0.5 * b), 0.05)
    separate = 0.5 * esf(EmpiricalLoss(a), 0.05) + 0.5 * esf(EmpiricalLoss(b), 0.05)
    # returns convention: the combined tail is less negative
    assert joint >= separate - 3 * np.std(a) / math.sqrt(0.05 * n)


# ---------- Empirical ----------

def test_empirical_quantile_rule():
    dist = EmpiricalLoss([0, -1, -3, -2, 1, 2, 3, 4, 5, 6])
    assert var(dist, 0.1) == -3.0
    assert var(dist, 0.15) == -2.0
    assert var(dist, 0.5) == 1.0


def test_empirical_exact_tail_and_choquet():
    dist = EmpiricalLoss(np.arange(1.0, 11.0))
    assert esf(dist, 0.2) == pytest.approx(1.5)
    assert esf(dist, 0.25) == pytest.approx((1 + 2 + 0.5 * 3) / 2.5)
    assert choquet_integral(dist, DistortionFunction.identity()) == pytest.approx(5.5)
    tail, choquet = esf_routes(dist, 0.25)
    assert tail == pytest.approx(choquet, abs=1e-12)


# ---------- Distortions ----------

def test_classification():
    v = classify_distortion(DistortionFunction.var(0.05))
    assert (v["complete"], v["exhaustive"]) == (False, False)
    c = classify_distortion(DistortionFunction.cvar(0.05))
    assert (c["complete"], c["concave"], c["exhaustive"]) == (False, True, False)
    w = classify_distortion(DistortionFunction.wang(0.5))
    assert (w["complete"], w["concave"], w["exhaustive"]) == (True, True, True)
    assert classify_distortion(DistortionFunction.identity())["complete"] is True


def test_dual_and_custom():
    g = DistortionFunction.cvar(0.2)
    d = g.dual()
    u = np.linspace(0, 1, 11)
    np.testing.assert_allclose(d(u), 1.0 - g(1.0 - u))
    sq = DistortionFunction.custom(lambda x: np.sqrt(x), "sqrt")
    assert classify_distortion(sq)["exhaustive"] is True
    with pytest.raises(DomainError):
        DistortionFunction.custom(lambda x: 0.5 * x, "half")
    with pytest.raises(DomainError):
        DistortionFunction.custom(lambda x: 1.0 - x, "decreasing")


# ---------- Report ----------

def test_risk_profile_labels():
    profile = risk_profile(STD_NORMAL, [0.01, 0.05], 0.5)
    assert list(profile) == ["VaR (1%)", "VaR (5%)", "ESF (1%)", "ESF (5%)", "Wang (r=0.5)"]
    assert profile["Wang (r=0.5)"] == pytest.approx(-0.5, abs=1e-5)


def test_build_risk_report(tmp_path):
    rng = np.random.default_rng(30)
    observed = rng.normal(0.0, 0.01, 2000)
    report = build_risk_report({"A": observed}, {"A": NormalLoss(0.0, 0.01)}, r=0.5)
    frame = report.to_frame()
    assert list(frame.columns) == ["A"]
    assert "Empirical VaR (1%)" in frame.index
    assert frame.loc["Copula Estimated VaR (1%)", "A"] == pytest.approx(-2.3263, abs=1e-3)
    assert report.get("A", "Copula Estimated", "ESF", 0.01) <= report.get("A", "Copula Estimated", "VaR", 0.01)
    assert report.violations() == []

    text = report.to_json(tmp_path / "risk_report.json")
    payload = json.loads(text)
    assert payload["units"] == "percent"
    back = RiskReport.load(tmp_path / "risk_report.json")
    assert back.values["A"] == pytest.approx(report.values["A"])
    rendered = report.to_text(tmp_path / "risk_report.txt")
    assert rendered.startswith("# Values are log-returns in percent")
    assert "-2.33" in rendered

"""
Batch pipeline that composes `PriceParser`, the blocked Gibbs sampler, the
copula layer, portfolio selection and the risk report.

Stages run in order (ingest, fit, copula, portfolio, risk) and write their
artifacts as they finish, so a failed run still leaves the artifacts of the
completed stages behind, flagged as partial in ``manifest.json``.
"""

import hashlib
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .copula import DEFAULT_DF, CopulaModel, JointSample, fit_copula, pca_projection, simulate_joint
from .diagnostics import compare_densities, hpd_table
from .dp_mixture import MIN_OBSERVATIONS, BlockedGibbsSampler, DpConfig, GibbsTrace, OccupancySummary, RpmEstimate
from .errors import EXIT_NOT_CONVERGED, ConfigError, DpRiskError, InsufficientDataError
from .ingest import PriceParser
from .logutil import LoggingMixin
from .market import LogReturnSeries, compute_log_returns, fit_bs_params
from .numerics import as_seed_sequence, make_generator
from .portfolio import Portfolio, mean_variance_weights, moment_inputs, portfolio_risk
from .risk import EmpiricalLoss, MixtureLoss, RiskReport, build_risk_report, risk_profile

logger = logging.getLogger(__name__)

STAGES = ("ingest", "fit", "copula", "portfolio", "risk")
MIN_SIMULATIONS = 1000
WEIGHT_SUM_TOL = 1e-6


def safe_name(asset_id: str) -> str:
    """File-system safe form of an asset id."""
    return re.sub(r"[^A-Za-z0-9._-]+", "_", str(asset_id)).strip("_") or "asset"


def _number(name: str, value, integer: bool = False) -> Union[int, float]:
    """Coerce a config value to float (or int), raising ConfigError on junk."""
    try:
        number = float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name} must be a number, got {value!r}") from e
    if not integer:
        return number
    if not math.isfinite(number) or int(number) != number:
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    return int(number)


@dataclass
class RunConfig:
    """Everything one pipeline run needs.

    ``dp`` holds DpConfig fields shared by every asset; ``dp_per_asset``
    overrides them per asset id. Portfolio weights come from ``weights``
    when given, from mean-variance selection when ``risk_aversion`` or
    ``target_return`` is set, and are equal otherwise.
    """

    inputs: List[str] = field(default_factory=list)
    date_column: Optional[str] = None
    price_columns: Optional[Union[List[str], Dict[str, str]]] = None
    benchmark: Optional[str] = None
    dp: Dict = field(default_factory=dict)
    dp_per_asset: Dict[str, Dict] = field(default_factory=dict)
    copula_df: float = DEFAULT_DF
    weights: Optional[Union[List[float], Dict[str, float]]] = None
    risk_aversion: Optional[float] = None
    target_return: Optional[float] = None
    long_only: bool = False
    moment_source: str = "sample"
    gammas: List[float] = field(default_factory=lambda: [0.01, 0.05])
    wang_r: float = 0.5
    n_sims: int = 100000
    seed: Optional[int] = 0
    output_dir: str = "output"
    n_jobs: int = 1
    credibility: float = 0.9
    enable_logging: bool = False

    def __post_init__(self):
        self.inputs = [str(p) for p in self.inputs]
        try:
            self.copula_df = float(self.copula_df)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"copula_df must be a number or 'inf', got {self.copula_df!r}") from e
        if isinstance(self.gammas, (str, bytes)) or not hasattr(self.gammas, "__iter__"):
            raise ConfigError(f"gammas must be a list of numbers, got {self.gammas!r}")
        self.gammas = [_number("gammas", g) for g in self.gammas]
        if not self.gammas or any(not 0.0 < g < 1.0 for g in self.gammas):
            raise ConfigError(f"gammas must be non-empty and inside (0, 1), got {self.gammas}")
        self.n_sims = _number("n_sims", self.n_sims, integer=True)
        if self.n_sims < MIN_SIMULATIONS:
            raise ConfigError(f"n_sims must be an integer >= {MIN_SIMULATIONS}, got {self.n_sims!r}")
        self.n_jobs = _number("n_jobs", self.n_jobs, integer=True)
        self.wang_r = _number("wang_r", self.wang_r)
        self.credibility = _number("credibility", self.credibility)
        if self.seed is not None:
            self.seed = _number("seed", self.seed, integer=True)
            if self.seed < 0:
                raise ConfigError(f"seed must be non-negative, got {self.seed}")
        for name in ("risk_aversion", "target_return"):
            if getattr(self, name) is not None:
                setattr(self, name, _number(name, getattr(self, name)))
        if not self.copula_df > 2:
            raise ConfigError(f"copula_df must exceed 2 (or be inf), got {self.copula_df!r}")
        if not math.isfinite(self.wang_r):
            raise ConfigError("wang_r must be finite")
        if self.n_jobs < 1:
            raise ConfigError(f"n_jobs must be >= 1, got {self.n_jobs!r}")
        if not 0.0 < self.credibility < 1.0:
            raise ConfigError(f"credibility must lie in (0, 1), got {self.credibility!r}")
        if self.moment_source not in ("sample", "rpm"):
            raise ConfigError(f"moment_source must be 'sample' or 'rpm', got {self.moment_source!r}")
        if self.risk_aversion is not None and self.target_return is not None:
            raise ConfigError("give either risk_aversion or target_return, not both")
        if self.weights is not None and (self.risk_aversion is not None or self.target_return is not None):
            raise ConfigError("explicit weights exclude mean-variance settings")
        # surfaces bad DpConfig fields now rather than mid-run
        DpConfig.from_dict(self.dp)
        for asset, overrides in self.dp_per_asset.items():
            DpConfig.from_dict({**self.dp, **overrides})

    def check_inputs(self):
        """Referenced input files or folders must exist."""
        if not self.inputs:
            raise ConfigError("no input files configured")
        missing = [p for p in self.inputs if not (Path(p).is_file() or Path(p).is_dir())]
        if missing:
            raise ConfigError(f"input files not found: {missing}")

    def dp_config_for(self, asset_id: str, seed: Optional[int] = None) -> DpConfig:
        values = {**self.dp, **self.dp_per_asset.get(asset_id, {})}
        if seed is not None:
            values["seed"] = seed
        return DpConfig.from_dict(values)

    def to_dict(self) -> Dict:
        values = asdict(self)
        if math.isinf(self.copula_df):
            values["copula_df"] = "inf"
        return values

    def to_json(self, path: Optional[Union[str, Path]] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, values: Dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown RunConfig fields: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        """Load a JSON run configuration."""
        logger.info(f"Reading run configuration from file: {path}")
        try:
            values = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(values)

    def override(self, **values) -> "RunConfig":
        """Copy with every non-None keyword applied (CLI flags over file values)."""
        return replace(self, **{k: v for k, v in values.items() if v is not None})


class RiskPipeline(LoggingMixin):
    """Orchestrates ingestion, per-asset fits, the copula, weights and the risk report.

    Usage:
        pipeline = RiskPipeline(RunConfig(inputs=["prices.csv"], seed=7))
        status = pipeline.run()
    """

    def __init__(self, config: RunConfig, enable_logging: Optional[bool] = None, verbose: bool = True):
        self.config = config
        self.enable_logging = config.enable_logging if enable_logging is None else enable_logging
        self.verbose = verbose
        self._setup_logging("pipeline")
        self.output_dir = Path(config.output_dir)
        self.series: Dict[str, LogReturnSeries] = {}
        self.returns: Optional[pd.DataFrame] = None
        self.fits: Dict[str, Tuple[RpmEstimate, OccupancySummary, GibbsTrace]] = {}
        self.model: Optional[CopulaModel] = None
        self.joint: Optional[JointSample] = None
        self.portfolio: Optional[Portfolio] = None
        self.report: Optional[RiskReport] = None
        self.artifacts: Dict[str, str] = {}
        self.completed: List[str] = []
        self._fit_seed, self._sim_seed = as_seed_sequence(config.seed).spawn(2)

    # Assets ------------------------------------------------------------
    @property
    def assets(self) -> List[str]:
        """Portfolio assets: every ingested asset except the benchmark."""
        if self.returns is None:
            return []
        return [a for a in self.returns.columns if a != self.config.benchmark]

    @property
    def converged(self) -> Dict[str, bool]:
        return {asset: fit[0].converged for asset, fit in self.fits.items()}

    @property
    def estimated_label(self) -> str:
        return "Copula Estimated" if len(self.assets) > 1 else "Model Estimated"

    # Artifacts ---------------------------------------------------------
    def _record(self, path: Path) -> Path:
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.artifacts[path.relative_to(self.output_dir).as_posix()] = digest
        self._log_info(f"Wrote {path}")
        return path

    def _write_text(self, name: str, text: str) -> Path:
        path = self.output_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return self._record(path)

    def _write_frame(self, name: str, df: pd.DataFrame) -> Path:
        path = self.output_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False)
        return self._record(path)

    def _write_manifest(self, status: int, requested: Tuple[str, ...]) -> Path:
        manifest = {
            "status": status,
            "partial": len(self.completed) < len(requested),
            "stages_requested": list(requested),
            "stages_completed": list(self.completed),
            "converged": self.converged,
            "seed": self.config.seed,
            "artifacts": [{"name": name, "sha256": digest} for name, digest in sorted(self.artifacts.items())],
        }
        path = self.output_dir / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        self._log_info(f"Wrote {path} ({len(self.artifacts)} artifacts, status {status})")
        return path

    # Stages ------------------------------------------------------------
    def ingest(self):
        """Read every input file and align the log-returns on common dates."""
        self.config.check_inputs()
        parser = PriceParser(enable_logging=self.enable_logging, verbose=self.verbose)
        for path in self.config.inputs:
            if Path(path).is_dir():
                found = [compute_log_returns(ps) for ps in
                         parser.from_folder(path, self.config.date_column, self.config.price_columns)]
            else:
                found = parser.from_file(path, self.config.date_column, self.config.price_columns).log_returns()
            for lr in found:
                if lr.asset_id in self.series:
                    raise ConfigError(f"asset {lr.asset_id!r} appears in more than one input")
                self.series[lr.asset_id] = lr
        if not self.series:
            raise ConfigError(f"no price series found in {self.config.inputs}")

        if self.config.benchmark is not None and self.config.benchmark not in self.series:
            raise ConfigError(f"benchmark {self.config.benchmark!r} is not among the ingested assets")
        columns = [pd.Series(lr.returns, index=pd.DatetimeIndex(lr.timestamps), name=asset)
                   for asset, lr in self.series.items()]
        aligned = pd.concat(columns, axis=1, join="inner").sort_index()
        for asset, lr in self.series.items():
            if len(lr) > len(aligned):
                self._log_warning(f"{asset}: {len(lr) - len(aligned)} returns fall outside the common dates")
        if len(aligned) < MIN_OBSERVATIONS:
            raise InsufficientDataError(
                f"only {len(aligned)} common return dates across {list(self.series)}; need {MIN_OBSERVATIONS}")
        if not self.assets:
            raise ConfigError("no portfolio assets left besides the benchmark")
        self.returns = aligned
        self._log_info(f"Aligned {len(self.series)} assets on {len(aligned)} common dates")
        return self

    def _fit_one(self, asset: str, seed: int):
        data = LogReturnSeries(asset, self.returns[asset].to_numpy(), timestamps=self.returns.index.to_numpy())
        sampler = BlockedGibbsSampler(self.config.dp_config_for(asset, seed), enable_logging=self.enable_logging,
                                      verbose=self.verbose, name=f"gibbs_{safe_name(asset)}")
        return sampler.run(data)

    def fit(self):
        """DP mixture per asset (benchmark included), concurrently on ``n_jobs`` threads."""
        columns = list(self.returns.columns)
        seeds = [int(child.generate_state(1)[0]) for child in self._fit_seed.spawn(len(columns))]
        with ThreadPoolExecutor(max_workers=self.config.n_jobs) as pool:
            results = list(pool.map(self._fit_one, columns, seeds))

        msd_rows, hpd_frames = [], []
        for asset, (rpm, summary, trace) in zip(columns, results):
            self.fits[asset] = (rpm, summary, trace)
            name = safe_name(asset)
            self._write_text(f"rpm_{name}.json", rpm.to_json())
            self._write_frame(f"traces_{name}.csv", trace.to_frame())
            self._write_frame(f"occupancy_{name}.csv", summary.to_frame())

            x = self.returns[asset].to_numpy()
            mu, sigma = fit_bs_params(x)
            # per-period normal: mean mu - sigma^2/2, sd sigma
            comparison = compare_densities(x, rpm, bs=(mu - 0.5 * sigma ** 2, sigma))
            self._write_frame(f"density_{name}.csv", comparison.to_frame())
            msd_rows.append({"asset": asset, "msd_rpm": comparison.msd_rpm, "msd_bs": comparison.msd_bs,
                             "n_components": rpm.n_components, "converged": rpm.converged})

            table = hpd_table(trace, self.config.credibility)
            table.insert(0, "asset", asset)
            hpd_frames.append(table)
            if not rpm.converged:
                self._log_warning(f"{asset}: sampler did not converge; results flagged")

        self._write_frame("msd.csv", pd.DataFrame(msd_rows))
        self._write_frame("hpd.csv", pd.concat(hpd_frames, ignore_index=True))
        return self

    def copula(self):
        """Fit the t-copula over the portfolio assets and simulate joint returns."""
        assets = self.assets
        marginals = [self.fits[a][0] for a in assets]
        if len(assets) == 1:
            draws = marginals[0].sample(self.config.n_sims, make_generator(self._sim_seed))
            self.joint = JointSample(draws[:, None], assets)
            self._log_info(f"Single asset {assets[0]}: sampled {self.config.n_sims} draws from its predictive")
        else:
            self.model = fit_copula(self.returns[assets], self.config.copula_df, marginals, assets)
            self._write_text("tau.json", self.model.concordance.to_json())
            self._write_text("sigma.json", self.model.to_json())
            self.joint = simulate_joint(self.model, self.config.n_sims, self._sim_seed, n_workers=self.config.n_jobs)
            pca = pca_projection(self.returns[assets], self.joint)
            self._write_frame("pca.csv", pca.to_frame())
        self._write_frame("joint_sample.csv", self.joint.to_frame())
        return self

    def _configured_weights(self) -> np.ndarray:
        assets = self.assets
        weights = self.config.weights
        if isinstance(weights, dict):
            missing = [a for a in assets if a not in weights]
            if missing or set(weights) - set(assets):
                raise ConfigError(f"weights must name exactly the assets {assets}, got {sorted(weights)}")
            w = np.array([weights[a] for a in assets], dtype=float)
        else:
            w = np.asarray(weights, dtype=float).ravel()
            if w.size != len(assets):
                raise ConfigError(f"{w.size} weights for {len(assets)} assets {assets}")
        if not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ConfigError(f"weights must be finite and sum to 1, got sum {w.sum()!r}")
        return w

    def select_weights(self):
        """Fixed, mean-variance or equal weights, written to weights.json."""
        assets = self.assets
        cfg = self.config
        if cfg.weights is not None:
            self.portfolio = Portfolio.normalized(assets, self._configured_weights())
        elif len(assets) > 1 and (cfg.risk_aversion is not None or cfg.target_return is not None):
            mean, cov = moment_inputs(self.returns[assets], copula=self.model, source=cfg.moment_source)
            self.portfolio = mean_variance_weights(mean, cov, cfg.risk_aversion, cfg.target_return,
                                                   cfg.long_only, assets)
        else:
            self.portfolio = Portfolio.equal(assets)
        self._log_info(f"Weights: {dict(zip(assets, np.round(self.portfolio.weights, 6)))}")
        self._write_text("weights.json", self.portfolio.to_json())
        return self

    def assess_risk(self):
        """Empirical and model-estimated VaR, ESF and Wang values, written as JSON and text."""
        cfg = self.config
        assets = self.assets
        observed = self.returns[assets]
        if self.model is not None:
            self.report = portfolio_risk(self.portfolio, self.model, cfg.gammas, cfg.wang_r,
                                         observed=observed, joint=self.joint)
        else:
            asset = assets[0]
            self.report = build_risk_report({asset: observed[asset].to_numpy()}, {asset: self.fits[asset][0]},
                                            cfg.gammas, cfg.wang_r, estimated_label=self.estimated_label)
        if cfg.benchmark is not None:
            bench = cfg.benchmark
            self.report.add(bench, "Empirical",
                            risk_profile(EmpiricalLoss(self.returns[bench].to_numpy()), cfg.gammas, cfg.wang_r))
            self.report.add(bench, self.estimated_label,
                            risk_profile(MixtureLoss(self.fits[bench][0]), cfg.gammas, cfg.wang_r))
        self._write_text("risk_report.json", self.report.to_json())
        self._write_text("risk_report.txt", self.report.to_text())
        return self

    # Pipeline ----------------------------------------------------------
    def run(self, until: str = "risk") -> int:
        """Run the stages up to ``until`` and return the process exit status.

        0 on success, the error's exit code when a stage fails, and 4 when
        every stage finished but some sampler did not converge.
        """
        if until not in STAGES:
            raise ConfigError(f"unknown stage {until!r}; expected one of {STAGES}")
        requested = STAGES[:STAGES.index(until) + 1]
        steps = {"ingest": self.ingest, "fit": self.fit, "copula": self.copula,
                 "portfolio": self.select_weights, "risk": self.assess_risk}
        status = 0
        for stage in requested:
            self._log_info(f"Stage {stage}: start")
            try:
                steps[stage]()
            except DpRiskError as e:
                self._log_error(f"Stage {stage} failed: {e}")
                status = e.exit_code
                break
            except Exception as e:
                logger.exception(f"Stage {stage} failed unexpectedly")
                self._log_error(f"Stage {stage} failed: {e}")
                status = 1
                break
            self.completed.append(stage)
            self._log_info(f"Stage {stage}: done")
        if status == 0 and not all(self.converged.values()):
            status = EXIT_NOT_CONVERGED
        self._write_manifest(status, requested)
        return status


# Convenience function
def run_pipeline(config: RunConfig, until: str = "risk", verbose: bool = False) -> int:
    """Run the batch pipeline for ``config``; returns the exit status."""
    return RiskPipeline(config, verbose=verbose).run(until)

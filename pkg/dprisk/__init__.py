"""
Dirichlet-process mixture risk toolkit (dprisk)
"""

from .errors import (
    DpRiskError, InputError, InsufficientDataError, DimensionError, DomainError, IngestError,
    ConfigError, NumericalError, IntegrationError, MarginalError, EXIT_NOT_CONVERGED,
)
from .market import (
    PriceSeries, LogReturnSeries, MixtureGbmParams, SimulatedPaths, compute_log_returns,
    reconstruct_prices, fit_bs_params, simulate_mixture_gbm, price_paths, martingale_residuals,
    martingale_pass_rate, make_price_series,
)
from .dp_mixture import (
    DpConfig, GibbsState, GibbsTrace, OccupancySummary, RpmEstimate, BlockedGibbsSampler,
    stick_to_weights, allocate_clusters, update_alpha, update_sticks, update_cluster_params,
    posterior_membership_curve, predictive_density, predictive_cdf, predictive_quantile,
    prior_predictive, draw_base_measure, alpha_posterior, run_blocked_gibbs, run_chains,
)
from .risk import (
    LossDistribution, NormalLoss, MixtureLoss, EmpiricalLoss, DistortionFunction, RiskReport,
    classify_distortion, choquet_integral, var, esf, esf_routes, wang_measure, wang_adjusted_return,
    risk_profile, build_risk_report, bs_loss_distribution,
)
from .copula import (
    ConcordanceMatrix, CopulaModel, JointSample, PcaComparison, kendall_tau, tau_to_correlation,
    fit_copula, simulate_joint, gaussian_copula_logdensity, t_copula_logdensity, pca_projection,
)
from .numerics import nearest_correlation, spawn_generators
from .portfolio import (
    Portfolio, portfolio_returns, mean_variance_weights, efficient_frontier, moment_inputs, portfolio_risk,
)
from .diagnostics import (
    DensityGrid, DensityComparison, kde, silverman_bandwidth, mean_square_deviation,
    density_grid_from_rpm, density_grid_from_normal, compare_densities, hpd_interval,
    equal_tailed_interval, hpd_table,
)
from .ingest import PriceParser, ingest_csv
from .pipeline import RunConfig, RiskPipeline, run_pipeline

__version__ = "1.0.0"

__all__ = [
    'DpRiskError', 'InputError', 'InsufficientDataError', 'DimensionError', 'DomainError', 'IngestError',
    'ConfigError', 'NumericalError', 'IntegrationError', 'MarginalError', 'EXIT_NOT_CONVERGED',
    'PriceSeries', 'LogReturnSeries', 'MixtureGbmParams', 'SimulatedPaths', 'compute_log_returns',
    'reconstruct_prices', 'fit_bs_params', 'simulate_mixture_gbm', 'price_paths', 'martingale_residuals',
    'martingale_pass_rate', 'make_price_series',
    'DpConfig', 'GibbsState', 'GibbsTrace', 'OccupancySummary', 'RpmEstimate', 'BlockedGibbsSampler',
    'stick_to_weights', 'allocate_clusters', 'update_alpha', 'update_sticks', 'update_cluster_params',
    'posterior_membership_curve', 'predictive_density', 'predictive_cdf', 'predictive_quantile',
    'prior_predictive', 'draw_base_measure', 'alpha_posterior', 'run_blocked_gibbs', 'run_chains',
    'LossDistribution', 'NormalLoss', 'MixtureLoss', 'EmpiricalLoss', 'DistortionFunction', 'RiskReport',
    'classify_distortion', 'choquet_integral', 'var', 'esf', 'esf_routes', 'wang_measure',
    'wang_adjusted_return', 'risk_profile', 'build_risk_report', 'bs_loss_distribution',
    'ConcordanceMatrix', 'CopulaModel', 'JointSample', 'PcaComparison', 'kendall_tau', 'tau_to_correlation',
    'fit_copula', 'simulate_joint', 'gaussian_copula_logdensity', 't_copula_logdensity', 'pca_projection',
    'nearest_correlation', 'spawn_generators',
    'Portfolio', 'portfolio_returns', 'mean_variance_weights', 'efficient_frontier', 'moment_inputs',
    'portfolio_risk',
    'DensityGrid', 'DensityComparison', 'kde', 'silverman_bandwidth', 'mean_square_deviation',
    'density_grid_from_rpm', 'density_grid_from_normal', 'compare_densities', 'hpd_interval',
    'equal_tailed_interval', 'hpd_table',
    'PriceParser', 'ingest_csv',
    'RunConfig', 'RiskPipeline', 'run_pipeline',
]

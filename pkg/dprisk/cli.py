"""
Command-line front door.

    dprisk pipeline --config run.json
    dprisk fit --input prices.csv --seed 7 --output-dir out/
    dprisk simulate-gbm --mu 0.05 --weights 0.5 0.3 0.2 --sigmas 0.1 0.2 0.4
    dprisk report --output-dir out/

Flags override the JSON config file, which overrides the defaults. The
process exit status is 0 on success, 2 for rejected input, 3 for numerical
failures and 4 when a sampler did not converge.
"""

import logging
import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Dict, List, Optional

from .errors import DpRiskError, InputError
from .logutil import LOG_FORMAT
from .market import MixtureGbmParams, martingale_pass_rate, martingale_residuals, simulate_mixture_gbm
from .pipeline import RunConfig, RiskPipeline
from .risk import RiskReport

logger = logging.getLogger(__name__)

# subcommand -> last pipeline stage it runs
STAGE_OF = {"fit": "fit", "copula": "copula", "portfolio": "portfolio", "risk": "risk", "pipeline": "risk"}
DP_FLAGS = {"max_iter": "max_iter", "burn_in": "burn_in", "truncation": "H", "epsilon": "epsilon",
            "thin": "thin", "alpha_window": "alpha_window"}


def parse_columns(text: Optional[str]):
    """'a,b' -> ['a', 'b']; 'px=IBM,close=INTC' -> {'px': 'IBM', 'close': 'INTC'}."""
    if not text:
        return None
    items = [item.strip() for item in text.split(",") if item.strip()]
    if any("=" in item for item in items):
        pairs = [item.split("=", 1) for item in items]
        return {column.strip(): (asset.strip() or column.strip()) for column, asset in pairs}
    return items


def _add_run_arguments(parser: ArgumentParser):
    parser.add_argument('--config', metavar='FILE', help='JSON run configuration')
    parser.add_argument('--log', dest='enable_logging', action='store_const', const=True,
                        help='write component logs under tmp/')

    datag = parser.add_argument_group('Data')
    datag.add_argument('--input', dest='inputs', metavar='CSV', action='append',
                       help='price file or folder of CSV files (repeatable)')
    datag.add_argument('--date-column', metavar='NAME', help='date column (default: first date-like column)')
    datag.add_argument('--columns', metavar='SPEC',
                       help="price columns, 'a,b' or 'column=asset,...' (default: all but the date)")
    datag.add_argument('--benchmark', metavar='ASSET', help='asset reported but kept out of the portfolio')

    fitg = parser.add_argument_group('Sampler')
    fitg.add_argument('--max-iter', metavar='N', type=int, help='maximum Gibbs sweeps')
    fitg.add_argument('--burn-in', metavar='N', type=int, help='discarded sweeps')
    fitg.add_argument('--thin', metavar='N', type=int, help='keep every N-th sweep')
    fitg.add_argument('--alpha-window', metavar='N', type=int, help='sweeps between stopping checks')
    fitg.add_argument('--truncation', metavar='H', type=int, help='stick-breaking truncation level')
    fitg.add_argument('--epsilon', metavar='EPS', type=float, help='truncation tolerance')
    fitg.add_argument('--n-jobs', metavar='N', type=int, help='concurrent per-asset fits')
    fitg.add_argument('--credibility', metavar='P', type=float, help='HPD credibility')

    copg = parser.add_argument_group('Copula and portfolio')
    copg.add_argument('--copula-df', metavar='DF', help="t-copula degrees of freedom ('inf' for Gaussian)")
    copg.add_argument('--n-sims', metavar='N', type=int, help='joint simulations')
    copg.add_argument('--weights', metavar='W', type=float, nargs='+', help='portfolio weights')
    copg.add_argument('--risk-aversion', metavar='LAMBDA', type=float, help='mean-variance risk aversion')
    copg.add_argument('--target-return', metavar='R', type=float, help='mean-variance target return')
    copg.add_argument('--long-only', action='store_const', const=True, help='forbid short positions')
    copg.add_argument('--moment-source', choices=('sample', 'rpm'), help='mean-variance inputs')

    riskg = parser.add_argument_group('Risk')
    riskg.add_argument('--gammas', metavar='G', type=float, nargs='+', help='tail probabilities')
    riskg.add_argument('--wang-r', metavar='R', type=float, help='Wang market price of risk')

    outg = parser.add_argument_group('Output')
    outg.add_argument('--seed', metavar='N', type=int, help='root seed of every random stream')
    outg.add_argument('--output-dir', metavar='DIR', help='artifact directory')


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="dprisk", description="Dirichlet-process mixture risk toolkit")
    parser.add_argument('-v', '--verbose', action='store_true', help='echo progress to the console')
    sub = parser.add_subparsers(dest="command", required=True)

    helps = {
        "fit": "fit the DP mixture to every asset",
        "copula": "fit marginals and the t-copula, simulate joint returns",
        "portfolio": "as copula, then choose portfolio weights",
        "risk": "as portfolio, then write the risk report",
        "pipeline": "run every stage",
    }
    for name, text in helps.items():
        _add_run_arguments(sub.add_parser(name, help=text))

    gbm = sub.add_parser("simulate-gbm", help="simulate mixture-GBM paths and check the martingale property")
    gbm.add_argument('--mu', metavar='MU', type=float, default=0.05, help='drift (default: %(default)s)')
    gbm.add_argument('--weights', metavar='PI', type=float, nargs='+', default=[0.5, 0.3, 0.2],
                     help='component weights (default: %(default)s)')
    gbm.add_argument('--sigmas', metavar='SIGMA', type=float, nargs='+', default=[0.1, 0.2, 0.4],
                     help='component volatilities (default: %(default)s)')
    gbm.add_argument('--dt', metavar='DT', type=float, default=1.0 / 252, help='step length (default: 1/252)')
    gbm.add_argument('--horizon', metavar='N', type=int, default=252, help='steps per path (default: %(default)s)')
    gbm.add_argument('--n-paths', metavar='N', type=int, default=100000, help='paths (default: %(default)s)')
    gbm.add_argument('--n-se', metavar='K', type=float, default=3.0,
                     help='standard errors allowed per step (default: %(default)s)')
    gbm.add_argument('--n-jobs', metavar='N', type=int, default=1, help='worker threads (default: %(default)s)')
    gbm.add_argument('--seed', metavar='N', type=int, default=0, help='RNG seed (default: %(default)s)')
    gbm.add_argument('--output-dir', metavar='DIR', default='output', help='artifact directory (default: %(default)s)')

    rep = sub.add_parser("report", help="render a saved risk_report.json as a text table")
    rep.add_argument('--output-dir', metavar='DIR', default='output', help='artifact directory (default: %(default)s)')
    rep.add_argument('--digits', metavar='N', type=int, default=2, help='decimals (default: %(default)s)')
    return parser


def config_from_args(args: Namespace) -> RunConfig:
    """Defaults, then the config file, then any flag given on the command line."""
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    dp: Dict = dict(config.dp)
    for flag, name in DP_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            dp[name] = value
    return config.override(
        inputs=args.inputs,
        date_column=args.date_column,
        price_columns=parse_columns(args.columns),
        benchmark=args.benchmark,
        dp=dp,
        copula_df=args.copula_df,
        weights=args.weights,
        risk_aversion=args.risk_aversion,
        target_return=args.target_return,
        long_only=args.long_only,
        moment_source=args.moment_source,
        gammas=args.gammas,
        wang_r=args.wang_r,
        n_sims=args.n_sims,
        seed=args.seed,
        output_dir=args.output_dir,
        n_jobs=args.n_jobs,
        credibility=args.credibility,
        enable_logging=args.enable_logging,
    )


def run_stages(args: Namespace) -> int:
    config = config_from_args(args)
    pipeline = RiskPipeline(config, verbose=args.verbose)
    status = pipeline.run(until=STAGE_OF[args.command])
    if pipeline.report is not None:
        print(pipeline.report.to_text())
    print(f"{len(pipeline.artifacts)} artifacts in {pipeline.output_dir} (status {status})")
    return status


def simulate_gbm(args: Namespace) -> int:
    params = MixtureGbmParams(args.mu, args.weights, args.sigmas)
    paths = simulate_mixture_gbm(params, args.horizon, args.n_paths, args.dt, seed=args.seed, n_workers=args.n_jobs)
    residuals = martingale_residuals(paths, params)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    residuals.to_csv(out / "martingale.csv", index=False)
    rate = martingale_pass_rate(residuals, args.n_se)
    print(f"{args.n_paths} paths x {args.horizon} steps: {rate:.2%} of steps within {args.n_se:g} standard errors")
    return 0


def show_report(args: Namespace) -> int:
    path = Path(args.output_dir) / "risk_report.json"
    if not path.is_file():
        raise InputError(f"no risk report at {path}")
    print(RiskReport.load(path).to_text(digits=args.digits))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format=LOG_FORMAT)
    handlers = {"simulate-gbm": simulate_gbm, "report": show_report}
    try:
        return handlers.get(args.command, run_stages)(args)
    except DpRiskError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"ERROR: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``shrinkfuse {fit,fuse,cv,simulate,report}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.  Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import DataError, FusionError, InvalidConfig, NumericalError, UsageError
from .fusion import METHODS, EstimateReport, FusionConfig, run_all_estimators
from .glm import fit_logistic
from .io import (
    ColumnSpec,
    ingest_csv,
    emit_report,
    load_plan,
    read_replications,
    summary_rows,
    write_replications,
    write_rows,
    SUMMARY_FIELDS,
)
from .penalized import PenaltyKind, PenaltySpec, PenaltyTarget, cross_validate_lambda, fit_penalized
from .sim import LOG_RATIO_FIELDS, aggregate_log_ratios, run_grid
from .svg import emit_figure_grid
from .weights import MOMENT_PROVIDERS

log = logging.getLogger("shrinkfuse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad arguments; usage errors here exit with 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _methods(text):
    if text is None:
        return None
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    unknown = sorted(set(methods) - set(METHODS))
    if unknown or not methods:
        raise argparse.ArgumentTypeError(f"unknown methods {unknown}; choose from {','.join(METHODS)}")
    return methods


def _add_data_args(sp, two_sources=True):
    sp.add_argument("--data", help="CSV file (with --source-column when it holds both sources)")
    if two_sources:
        sp.add_argument("--small", help="small-data CSV (use with --big)")
        sp.add_argument("--big", help="big-data CSV (use with --small)")
        sp.add_argument("--source-column", help="column with values S/B in a single --data file")
    sp.add_argument("--response", default="y", help="response column name (default: y)")
    sp.add_argument("--covariates", help="comma-separated covariate columns (default: all other columns)")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master random seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes; never changes results")
    common.add_argument("--out-dir", default=".", help="directory for output files")
    common.add_argument("--methods", type=_methods, default=None, help="comma list from " + ",".join(METHODS))
    common.add_argument("--moment-provider", choices=MOMENT_PROVIDERS, default=None,
                        help="moments for the Wh weight (default: bootstrap)")
    common.add_argument("--config", help="TOML simulation manifest")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="shrinkfuse", description="Shrinkage fusion of small- and big-data logistic fits.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("fit", parents=[common], help="logistic MLE for one CSV")
    _add_data_args(sp, two_sources=False)

    sp = sub.add_parser("fuse", parents=[common], help="run every estimator on small + big data")
    _add_data_args(sp)
    sp.add_argument("--cv-folds", type=int, default=10)
    sp.add_argument("--bootstrap-replicates", type=int, default=200)
    sp.add_argument("--l2-target", choices=[t.value for t in PenaltyTarget], default=PenaltyTarget.COEFFICIENTS.value)

    sp = sub.add_parser("cv", parents=[common], help="cross-validated lambda path for the L1 or L2 fit")
    _add_data_args(sp)
    sp.add_argument("--penalty", choices=["L1", "L2"], default="L1")
    sp.add_argument("--l2-target", choices=[t.value for t in PenaltyTarget], default=PenaltyTarget.COEFFICIENTS.value)
    sp.add_argument("--cv-folds", type=int, default=10)
    sp.add_argument("--n-lambda", type=int, default=50)

    sub.add_parser("simulate", parents=[common], help="run the Monte Carlo grid from --config")

    sp = sub.add_parser("report", parents=[common], help="log-ratio tables and SVG figures from simulation output")
    sp.add_argument("--results", help="replications.csv from simulate (default: <out-dir>/replications.csv)")
    return parser


def _column_spec(args, with_source=True) -> ColumnSpec:
    covs = tuple(c.strip() for c in args.covariates.split(",")) if args.covariates else None
    source = getattr(args, "source_column", None) if with_source else None
    return ColumnSpec(args.response, covs, source)


def _read_pair(args):
    if args.small or args.big:
        if not (args.small and args.big) or args.data:
            raise InvalidConfig("give --small and --big together, or --data with --source-column")
        (small, big), dropped = ingest_csv(args.small, _column_spec(args, False), big_path=args.big)
    elif args.data and args.source_column:
        (small, big), dropped = ingest_csv(args.data, _column_spec(args))
    else:
        raise InvalidConfig("need --small/--big or --data with --source-column")
    if dropped:
        print(f"dropped {dropped} incomplete row(s)", file=sys.stderr)
    return small, big


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(args) -> int:
    if not args.data:
        raise InvalidConfig("fit needs --data")
    data, dropped = ingest_csv(args.data, _column_spec(args, False))
    if dropped:
        print(f"dropped {dropped} incomplete row(s)", file=sys.stderr)
    fit = fit_logistic(data)
    report = EstimateReport(data.names, ("Small",), {"Small": fit.beta_hat}, {"Small": fit.se}, {},
                            {"loglik": fit.loglik, "iterations": fit.iterations})
    path = _out_dir(args) / "fit.csv"
    emit_report(report, path)
    print(f"wrote {path} (n={data.n}, p={data.p}, loglik={fit.loglik:.6f})")
    return EXIT_OK


def cmd_fuse(args) -> int:
    small, big = _read_pair(args)
    cfg = FusionConfig(methods=args.methods or METHODS, moment_provider=args.moment_provider or "bootstrap",
                       bootstrap_replicates=args.bootstrap_replicates, cv_folds=args.cv_folds,
                       seed=args.seed or 0, l2_target=PenaltyTarget(args.l2_target))
    report = run_all_estimators(small, big, cfg)
    path = _out_dir(args) / "estimates.csv"
    emit_report(report, path)
    for m, reason in report.failures.items():
        print(f"{m} failed: {reason}", file=sys.stderr)
    print(f"wrote {path} (n_S={small.n}, n_B={big.n}, p={small.p})")
    return EXIT_OK


def cmd_cv(args) -> int:
    small, big = _read_pair(args)
    target = PenaltyTarget(args.l2_target) if args.penalty == "L2" else PenaltyTarget.COEFFICIENTS
    spec = PenaltySpec(PenaltyKind(args.penalty), 0.0, target)
    seed = args.seed or 0
    cv = cross_validate_lambda(small, big, spec, args.cv_folds, seed, args.n_lambda)
    fit = fit_penalized(small, big, spec.with_lambda(cv.best_lambda))
    out = _out_dir(args)
    write_rows(out / "cv_curve.csv", cv.curve(), ("lambda", "cv_deviance", "cv_se"))
    rows = [{"coefficient": nm, "beta": float(b), "gamma": float(g)}
            for nm, b, g in zip(small.names, fit.beta_hat, fit.gamma_hat)]
    write_rows(out / "cv_fit.csv", rows, ("coefficient", "beta", "gamma"))
    print(f"best lambda {cv.best_lambda!r}; wrote {out / 'cv_curve.csv'} and {out / 'cv_fit.csv'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if not args.config:
        raise InvalidConfig("simulate needs --config")
    plan = load_plan(args.config)
    if args.seed is not None:
        plan = replace(plan, master_seed=args.seed)
    if args.methods:
        plan = replace(plan, methods=args.methods)
    if args.moment_provider:
        plan = replace(plan, moment_provider=args.moment_provider)
    if args.threads < 1:
        raise InvalidConfig("--threads must be at least 1")
    results = run_grid(plan.scenarios(), plan.methods, threads=args.threads)
    out = _out_dir(args)
    write_rows(out / "summary.csv", summary_rows(results), SUMMARY_FIELDS)
    write_replications(out / "replications.csv", results)
    (out / "plan.toml").write_text(plan.to_toml())
    for res in results:
        if res.flagged:
            print(f"cell {res.config.key()}: {len(res.failed_replications)} replication(s) dropped", file=sys.stderr)
    print(f"wrote {out / 'summary.csv'} and {out / 'replications.csv'} ({len(results)} cells)")
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out_dir(args)
    src = Path(args.results) if args.results else out / "replications.csv"
    if not src.is_file():
        raise InvalidConfig(f"results file {src} does not exist")
    rows = aggregate_log_ratios(read_replications(src))
    if args.methods:
        rows = [r for r in rows if r["method"] in args.methods]
    write_rows(out / "log_ratios.csv", rows, LOG_RATIO_FIELDS)
    groups = sorted({(r["n_B"], r["bias_mechanism"]) for r in rows})
    for n_B, mech in groups:
        table = [r for r in rows if r["n_B"] == n_B and r["bias_mechanism"] == mech]
        path = out / f"figure_{mech}_nB{n_B}.svg"
        emit_figure_grid(table, path, title=f"log MSE ratio vs Small, {mech}, n_B = {n_B}")
        print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "fuse": cmd_fuse, "cv": cmd_cv, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"shrinkfuse: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"shrinkfuse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"shrinkfuse: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FusionError as exc:
        print(f"shrinkfuse: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

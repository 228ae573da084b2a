#!/usr/bin/env python3
"""
Command-line front end for separable correlation estimation.

Subcommands:
  fit       fit one covariance model to a CSV data set and write JSON
  test      parametric bootstrap likelihood ratio test of separability
  simulate  Monte-Carlo estimation error / test size table from a scenario grid

Examples:
  python -m scripts.sepcor_cli fit --y data.csv --r 5 --c 5 --out fit.json --emit-sigma
  python -m scripts.sepcor_cli test --y data.csv --r 5 --c 5 --hypothesis cov-vs-cor --b 99 --workers 4
  python -m scripts.sepcor_cli simulate --config config/table1_desk.yaml --out out/table1.csv --summary out/table1.txt
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from core.config import Settings, load_settings
from core.errors import InputError, SepcorError
from core.inference import HypothesisKind, HypothesisTest, bootstrap_test
from core.io import (
    fit_payload,
    load_dataset,
    load_simulation_config,
    render_summary,
    unrestricted_payload,
    write_json,
    write_matrix_csv,
    write_report_csv,
)
from core.logs import configure_logging
from core.model import Dataset, Termination, nll_unrestricted, standardized_residuals
from core.simulation import run_simulation
from core.solver import InitStrategy, SolverConfig, fit_sepcor, fit_sepcov, fit_unrestricted

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_MAX_ITER = 2
EXIT_INDEFINITE = 3

LAYOUT_HELP = """\
Data layout: each CSV row is one observation y_i of length q = r*c, the
column-stacked vec of an r x c data matrix. Column (k-1)*r + j (1-based)
holds data-matrix cell (row j = V-index, column k = U-index). Pass
--transpose-cells when the columns hold the cells row by row instead.
"""


def exit_code(termination: Termination) -> int:
    if termination is Termination.CONVERGED:
        return EXIT_OK
    if termination is Termination.MAX_ITERATIONS:
        return EXIT_MAX_ITER
    return EXIT_INDEFINITE


@dataclass(frozen=True)
class _DenseFit:
    beta: np.ndarray
    sigma: np.ndarray


# --- Subcommands -----------------------------------------------------------------


def _solver_config(args: argparse.Namespace, settings: Settings) -> SolverConfig:
    return SolverConfig(
        epsilon=args.tol if args.tol is not None else settings.tol,
        max_iterations=args.max_iter if args.max_iter is not None else settings.max_iter,
        init=InitStrategy(args.init),
        seed=args.seed,
    )


def _dataset(args: argparse.Namespace) -> Dataset:
    return load_dataset(args.y, args.r, args.c, args.x, args.header, args.transpose_cells)


def cmd_fit(args: argparse.Namespace, settings: Settings) -> int:
    d = _dataset(args)
    if args.model == "unrestricted":
        sigma = fit_unrestricted(d)
        payload = unrestricted_payload(d.beta_hat, sigma, nll_unrestricted(d))
        fit, code = _DenseFit(d.beta_hat, sigma), EXIT_OK
    else:
        cfg = _solver_config(args, settings)
        report = fit_sepcor(d, cfg) if args.model == "sepcor" else fit_sepcov(d, cfg)
        payload = fit_payload(report, emit_sigma=args.emit_sigma, trace=args.trace)
        fit, code = report.params, exit_code(report.termination)
        logger.info("%s: %s after %d iterations", args.model, report.termination.value, report.iterations)
    write_json(args.out, payload)
    if args.sigma_csv:
        write_matrix_csv(args.sigma_csv, fit.sigma)
    if args.residuals:
        write_matrix_csv(args.residuals, standardized_residuals(d, fit))
    print(args.out)
    return code


def cmd_test(args: argparse.Namespace, settings: Settings) -> int:
    d = _dataset(args)
    t = HypothesisTest(kind=HypothesisKind(args.hypothesis), b_replicates=args.b, alpha=args.alpha, seed=args.seed)
    t.check_dataset(d)
    workers = args.workers if args.workers is not None else settings.workers
    result = bootstrap_test(d, t, _solver_config(args, settings), workers=workers)
    payload = {
        "hypothesis": t.kind.value,
        "lr_observed": result.lr_observed,
        "log_lr_observed": result.log_lr_observed,
        "p_value": result.p_value,
        "reject": result.reject,
        "b_effective": result.b_effective,
        "failed_replicates": result.failed_replicates,
        "alpha": result.alpha,
        "seed": t.seed,
    }
    write_json(args.out, payload)
    print(args.out)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    config = load_simulation_config(args.config)
    workers = args.workers if args.workers is not None else settings.workers
    reports = run_simulation(config, workers=workers)
    write_report_csv(args.out, reports)
    print(args.out)
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(render_summary(reports))
        print(args.summary)
    return EXIT_OK


# --- Parser -------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--quiet", action="store_true", help="only log errors")
    p.add_argument("--log-level", default=None, help="log level (default: SEPCOR_LOG_LEVEL or WARNING)")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--y", required=True, help="CSV of responses, n rows by q = r*c columns")
    p.add_argument("--x", default=None, help="CSV design matrix, n rows by p columns (default: intercept)")
    p.add_argument("--header", action="store_true", help="CSV files start with a header row")
    p.add_argument("--r", type=int, required=True, help="rows of the data matrix (V dimension)")
    p.add_argument("--c", type=int, required=True, help="columns of the data matrix (U dimension)")
    p.add_argument("--transpose-cells", action="store_true", help="columns hold cells row by row")


def _add_solver(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, default=None, help="stop when the objective changes by at most this (1e-10)")
    p.add_argument("--max-iter", type=int, default=None, help="iteration cap (10000)")
    p.add_argument("--init", choices=[s.value for s in InitStrategy], default=InitStrategy.IDENTITY.value)
    p.add_argument("--seed", type=int, default=None, help="random seed (default: SEPCOR_SEED or 0)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sepcor",
        description="Separable correlation covariance estimation and separability tests.",
        epilog=LAYOUT_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = ap.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a covariance model", epilog=LAYOUT_HELP,
                         formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_data(fit)
    _add_solver(fit)
    fit.add_argument("--model", choices=["sepcor", "sepcov", "unrestricted"], default="sepcor")
    fit.add_argument("--out", required=True, help="output JSON path")
    fit.add_argument("--emit-sigma", action="store_true", help="include the fitted Sigma in the JSON")
    fit.add_argument("--trace", action="store_true", help="include the objective trace in the JSON")
    fit.add_argument("--sigma-csv", default=None, help="also write the fitted Sigma as CSV")
    fit.add_argument("--residuals", default=None, help="write standardized residuals as CSV")
    _add_common(fit)
    fit.set_defaults(handler=cmd_fit)

    test = sub.add_parser("test", help="bootstrap likelihood ratio test", epilog=LAYOUT_HELP,
                          formatter_class=argparse.RawDescriptionHelpFormatter)
    _add_data(test)
    _add_solver(test)
    test.add_argument("--hypothesis", choices=[k.value for k in HypothesisKind], required=True)
    test.add_argument("--b", type=int, default=99, help="bootstrap replicates")
    test.add_argument("--alpha", type=float, default=0.05)
    test.add_argument("--workers", type=int, default=None, help="worker processes (0 = all cores)")
    test.add_argument("--out", required=True, help="output JSON path")
    _add_common(test)
    test.set_defaults(handler=cmd_test)

    sim = sub.add_parser("simulate", help="Monte-Carlo simulation table")
    sim.add_argument("--config", required=True, help="scenario grid (JSON or YAML)")
    sim.add_argument("--out", required=True, help="output CSV path")
    sim.add_argument("--workers", type=int, default=None, help="worker processes (0 = all cores)")
    sim.add_argument("--summary", default=None, help="also render a plain-text table")
    _add_common(sim)
    sim.set_defaults(handler=cmd_simulate)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_settings()
    configure_logging(args.log_level or settings.log_level, quiet=args.quiet)
    if getattr(args, "seed", None) is None and hasattr(args, "seed"):
        args.seed = settings.seed
    try:
        return args.handler(args, settings)
    except InputError as exc:
        print(f"error: {exc.summary}", file=sys.stderr)
        for diag in exc.diagnostics:
            print(f"  - {diag}", file=sys.stderr)
        return EXIT_INPUT
    except SepcorError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())

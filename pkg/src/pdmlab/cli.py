"""Command-line experiment runner.

Usage::

    pdmlab run --config experiments/congestion_bnn_memoryless.yaml --out out
    pdmlab sweep --config experiments/task_allocation_smith_sweep.yaml --jobs 4
    pdmlab finite --config experiments/demand_response_smith_finite.yaml --n-list 100 1000 --seeds 5
    pdmlab certify --config experiments/task_allocation_logit_eta25.yaml
    pdmlab equilibria --config experiments/demand_response_smith_memoryless.yaml

Exit codes: 0 on success, 1 on validation errors, 2 on numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import load_config
from .errors import InvalidArgumentError, NumericalError
from .experiment import (
    json_default,
    certify_experiment,
    equilibria_experiment,
    finite_experiment,
    run_experiment,
    sweep_experiment,
)

log = logging.getLogger("pdmlab")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="YAML experiment file")
    common.add_argument("--out", type=Path, default=None, help="output directory (overrides the config)")
    common.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="pdmlab", description="Population game / payoff dynamics experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="integrate every initial condition and write trajectory CSVs")
    sub.add_parser("sweep", parents=[common], help="integrate every initial condition and record limit points")
    fin = sub.add_parser("finite", parents=[common], help="finite-population runs against the mean model")
    fin.add_argument("--n-list", type=_positive_int, nargs="+", default=None, help="population sizes")
    fin.add_argument("--seeds", type=_positive_int, default=None, help="seeds per population size")
    fin.add_argument("--horizon", type=_positive_float, default=None, help="time horizon")
    sub.add_parser("certify", parents=[common], help="print the convergence certificate as JSON")
    sub.add_parser("equilibria", parents=[common], help="print the equilibrium set as JSON")
    return parser


def _print_json(data) -> None:
    print(json.dumps(data, indent=2, sort_keys=True, default=json_default))


def _dispatch(args: argparse.Namespace) -> None:
    cfg = load_config(args.config)
    log.info("loaded %s (%s)", args.config, cfg.name)
    if args.command == "run":
        report = run_experiment(cfg, args.out, args.jobs)
        _print_json({"experiment": cfg.name, "files": report.files, "runs": len(report.runs)})
    elif args.command == "sweep":
        summary = sweep_experiment(cfg, args.out, args.jobs)
        _print_json({k: summary[k] for k in ("experiment", "runs", "equilibria_reached", "unsettled_runs", "limit_points", "files")})
    elif args.command == "finite":
        summary = finite_experiment(cfg, args.out, args.jobs, args.n_list, args.seeds, args.horizon)
        _print_json(summary)
    elif args.command == "certify":
        _print_json(certify_experiment(cfg))
    else:
        _print_json(equilibria_experiment(cfg))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are validation errors here
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _dispatch(args)
    except InvalidArgumentError as exc:
        print(f"pdmlab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"pdmlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

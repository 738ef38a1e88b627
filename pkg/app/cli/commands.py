"""
Subcommand handlers

Each handler takes the parsed arguments and returns the exit code:
0 pass, 1 validator failure, 2 configuration error.
"""

import argparse
import logging
from pathlib import Path
from typing import List

from app.core.exceptions import ConfigurationError, PlotDependencyError
from app.core.experiment import (
    apply_overrides,
    exit_status,
    load_config,
    load_report,
    report_summary,
    run_experiment,
    validate_config,
)
from app.core.models import ExperimentConfig
from app.core.plots import emit_plots
from app.core.registry import MODELS, list_models

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def _print_errors(title: str, errors: List[str]) -> None:
    print(title)
    for error in errors:
        print(f"  - {error}")


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(Path(args.config))
    return apply_overrides(config, seed=args.seed, out=args.out)


def validate_config_command(args: argparse.Namespace) -> int:
    """Validate a config and list every problem"""
    try:
        config = _load(args)
    except ConfigurationError as e:
        _print_errors(str(e), e.errors)
        return EXIT_CONFIG
    errors = validate_config(config, args.workers)
    if errors:
        _print_errors(f"{args.config}: {len(errors)} problems", errors)
        return EXIT_CONFIG
    print(f"{args.config}: ok ({config.regime}, model {config.model.name})")
    return EXIT_PASS


def run_command(args: argparse.Namespace) -> int:
    """Run a config (whole pipeline or one stage) and print the verdict"""
    try:
        config = _load(args)
        report = run_experiment(config, workers=args.workers, stage=args.stage, plots=not args.no_plots)
    except ConfigurationError as e:
        _print_errors(str(e), e.errors)
        return EXIT_CONFIG

    counts = report_summary(report)
    print(
        f"{config.experiment_id}: {report.verdict} "
        f"({counts['pass']} pass, {counts['fail']} fail, {counts['inconclusive']} inconclusive)"
    )
    for row in report.rows:
        if row.verdict == "fail":
            print(f"  FAIL {row.metric}: value {row.value:.6g}, threshold {row.threshold:.6g}")
    return exit_status(report)


def plots_command(args: argparse.Namespace) -> int:
    """Write plot scripts for an existing run directory"""
    run_dir = Path(args.out or args.run_dir)
    try:
        report = load_report(run_dir / "report.json")
    except ConfigurationError as e:
        _print_errors(str(e), e.errors)
        return EXIT_CONFIG
    try:
        written = emit_plots(report, run_dir)
    except PlotDependencyError as e:
        logger.error(f"Plot emission failed: {e}")
        print(str(e))
        return EXIT_FAIL
    for name, path in written.items():
        print(f"{name}: {path}")
    return EXIT_PASS


def list_models_command(args: argparse.Namespace) -> int:
    """Print the bundled coefficient models"""
    width = max(len(name) for name in MODELS)
    for name in list_models():
        print(f"{name:<{width}}  {MODELS[name].summary}")
    return EXIT_PASS

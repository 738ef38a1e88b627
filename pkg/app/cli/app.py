"""
Argument parser for the toolkit CLI
"""

import argparse
from typing import List, Optional

from app import __version__
from app.cli import commands
from app.config.settings import settings


def _global_flags(default: object = None) -> argparse.ArgumentParser:
    """Flags shared by the main parser and every subcommand"""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--seed", type=int, default=default, help="override engine.master_seed")
    parent.add_argument(
        "--workers",
        type=int,
        default=default,
        help=f"worker threads (default: WORKERS environment variable, currently {settings.WORKERS})",
    )
    parent.add_argument("--out", type=str, default=default, help="override output.directory")
    return parent


def create_parser() -> argparse.ArgumentParser:
    """Create and configure the CLI parser"""
    parser = argparse.ArgumentParser(
        prog="interface-averaging",
        description="Simulate fast-slow systems with an interface and check their limits",
        parents=[_global_flags()],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    # subcommand copies must not reset values given before the subcommand
    shared = _global_flags(argparse.SUPPRESS)

    validate = subparsers.add_parser("validate-config", parents=[shared], help="check a config without running it")
    validate.add_argument("config", help="experiment config (JSON)")
    validate.set_defaults(handler=commands.validate_config_command)

    run = subparsers.add_parser("run", parents=[shared], help="run the full pipeline of a config")
    run.add_argument("config", help="experiment config (JSON)")
    run.add_argument("--no-plots", action="store_true", help="skip plot-script emission")
    run.set_defaults(handler=commands.run_command, stage="all")

    interface = subparsers.add_parser(
        "interface-stats", parents=[shared], help="excursion exit statistics and boundary increments only"
    )
    interface.add_argument("config", help="experiment config (JSON)")
    interface.add_argument("--no-plots", action="store_true", help="skip plot-script emission")
    interface.set_defaults(handler=commands.run_command, stage="interface")

    compare = subparsers.add_parser("compare", parents=[shared], help="marginal KS comparison against the limit only")
    compare.add_argument("config", help="experiment config (JSON)")
    compare.add_argument("--no-plots", action="store_true", help="skip plot-script emission")
    compare.set_defaults(handler=commands.run_command, stage="compare")

    plots = subparsers.add_parser("plots", parents=[shared], help="write plot scripts for a finished run")
    plots.add_argument("run_dir", help="directory holding report.json")
    plots.set_defaults(handler=commands.plots_command)

    models = subparsers.add_parser("list-models", parents=[shared], help="list the bundled coefficient models")
    models.set_defaults(handler=commands.list_models_command)
    return parser


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Parse argv and dispatch; returns the process exit code"""
    args = create_parser().parse_args(argv)
    return args.handler(args)

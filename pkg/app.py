# app.py
"""levylab command line: run, sweep, check-kernel and norms."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

from src.components.metrics import create_verdict_table, summary_lines
from src.errors import ConfigurationError, LevyLabError
from src.schema import load_scenario
from tools.kernel import check_kernel
from tools.norms import field_norms
from tools.run import RunReport, run_scenario
from tools.sweep import parse_values, sweep

logger = logging.getLogger("levylab")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _configure_logging(level: int, suppress_warnings: bool = False) -> None:
    """Configure root logging and optionally silence Python warnings."""
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    root = logging.getLogger()
    root.setLevel(level)
    if suppress_warnings:
        warnings.filterwarnings("ignore")
    logging.captureWarnings(True)


def _print_report(report: RunReport) -> None:
    table = create_verdict_table(report.certificates)
    for line in summary_lines(table, report.timings):
        print(line)
    for name, reason in report.skipped.items():
        print(f"{name}: skipped ({reason})")
    for stage in report.stages:
        if stage.status != "ok":
            print(f"stage {stage.name} {stage.status}: {stage.reason}")
    print(f"artifacts: {report.directory}")


def _cmd_run(args: argparse.Namespace) -> int:
    report = run_scenario(load_scenario(args.config, args.set), args.output)
    _print_report(report)
    return EXIT_OK if report.passed else EXIT_FAILED


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = load_scenario(args.config, args.set)
    result = sweep(config, args.axis, parse_values(args.values), workers=args.workers, output_root=args.output)
    print(result.table.to_string(index=False))
    print(f"sweep table: {result.path}")
    return EXIT_OK if result.passed else EXIT_FAILED


def _cmd_check_kernel(args: argparse.Namespace) -> int:
    report = check_kernel(load_scenario(args.config, args.set), args.output)
    _print_report(report)
    return EXIT_OK if report.passed else EXIT_FAILED


def _cmd_norms(args: argparse.Namespace) -> int:
    records = field_norms(args.field, args.spec)
    text = json.dumps(records, indent=2, default=float)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levylab", description="Transport-diffusion lab for Levy operators")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--quiet", action="store_true", help="Only warnings and errors; silence Python warnings.")
    parser.add_argument("--workers", type=int, default=None, help="Scenario pool size (default: $LEVYLAB_WORKERS or 2).")
    commands = parser.add_subparsers(dest="command", required=True)

    def scenario_command(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("config", type=Path, help="Scenario YAML file")
        sub.add_argument(
            "--set", action="append", default=[], metavar="PATH=VALUE",
            help="Override a config field by dotted path, e.g. --set solver.dt=0.005",
        )
        sub.add_argument("--output", type=Path, default=None, help="Output root (default: the scenario's output_dir)")
        return sub

    scenario_command("run", "Run one scenario").set_defaults(handler=_cmd_run)
    sweep_parser = scenario_command("sweep", "Run a scenario once per value of one field")
    sweep_parser.add_argument("--axis", required=True, help="Dotted path of the swept field")
    sweep_parser.add_argument("--values", required=True, help="Comma-separated values")
    sweep_parser.set_defaults(handler=_cmd_sweep)
    scenario_command("check-kernel", "Tabulate and certify the scenario kernel").set_defaults(handler=_cmd_check_kernel)

    norms = commands.add_parser("norms", help="Evaluate norms of a stored field file")
    norms.add_argument("field", type=Path)
    norms.add_argument("--spec", required=True, help='e.g. "morrey:q=2,a=1;holder:gamma=0.5"')
    norms.add_argument("--out", type=Path, default=None)
    norms.set_defaults(handler=_cmd_norms)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else getattr(logging, args.log_level)
    _configure_logging(level, suppress_warnings=args.quiet)
    try:
        return args.handler(args)
    except ConfigurationError as exc:
        logger.error("Configuration error: %s", exc)
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LevyLabError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())

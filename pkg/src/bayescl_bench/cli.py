#!/usr/bin/env python3
"""Command Line Interface for the continual-learning experiments.

``bayescl run <kind>`` runs an experiment over its seeds and writes CSV/JSON
artifacts; ``bayescl validate --config <file>`` lints a configuration and echoes
every resolved default.
"""

import argparse
from dataclasses import replace
import json
import logging
from pathlib import Path
import sys

from bayescl import __version__
from bayescl.tasks import Scenario

from .config import (
    DATASETS,
    ConfigError,
    ExperimentConfig,
    ExperimentKind,
    parse_seeds,
)
from .config_linter import ConfigLinter
from .config_parser import ConfigParser
from .experiments import AGGREGATE_FILE, run_experiment

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_FAILURE = 3

FILTER_SCENARIOS = ("balanced", "imbalanced", "custom")


def _report_invalid(source: str, error_info: dict | None) -> None:
    print(f"✗ '{source}' is not a valid experiment configuration", file=sys.stderr)
    if error_info:
        print(
            f"Error at line {error_info['line']}: {error_info['reason']}",
            file=sys.stderr,
        )
        if error_info["error_text"]:
            print(f">>> {error_info['error_text']}", file=sys.stderr)


def _apply_scenario(config: ExperimentConfig, scenario: str) -> ExperimentConfig:
    if config.kind is ExperimentKind.FILTER:
        if scenario not in FILTER_SCENARIOS:
            raise ConfigError(
                f"expected one of {', '.join(FILTER_SCENARIOS)}, got {scenario!r}",
                "filter.scenario",
            )
        return replace(config, filter=replace(config.filter, scenario=scenario))
    try:
        return replace(config, data=replace(config.data, scenario=Scenario(scenario)))
    except ValueError:
        choices = ", ".join(s.value for s in Scenario)
        raise ConfigError(
            f"expected one of {choices}, got {scenario!r}", "data.scenario"
        ) from None


def load_run_config(
    args: argparse.Namespace, base: ExperimentConfig | None = None
) -> ExperimentConfig:
    """Apply command-line overrides to a parsed file, or to the defaults.

    Raises:
        ConfigError: If an override is invalid or the file names a different
            experiment kind

    """
    kind = ExperimentKind(args.kind)
    config = base if base is not None else ExperimentConfig(kind)
    if config.kind is not kind:
        raise ConfigError(
            f"file describes a {config.kind.value} experiment, not {kind.value}",
            "kind",
        )

    if args.dataset:
        try:
            config = replace(config, data=replace(config.data, name=args.dataset))
        except ValueError as e:
            raise ConfigError(str(e), "data.name") from None
    if args.data_root:
        config = replace(config, data=replace(config.data, root=args.data_root))
        config.check_paths()
    if args.scenario:
        config = _apply_scenario(config, args.scenario)
    if args.head_mode:
        config = config.with_overrides(head_mode=args.head_mode)
    return config.with_overrides(
        seeds=parse_seeds(args.seeds) if args.seeds is not None else None,
        out_dir=args.out,
        threads=args.threads,
    )


def cmd_run(args: argparse.Namespace) -> int:
    base = None
    if args.config:
        parser = ConfigParser()
        ok, error_info = parser.validate_from_file(args.config)
        if not ok:
            _report_invalid(args.config, error_info)
            return EXIT_VALIDATION
        base = parser.parse_from_file(args.config)
    try:
        config = load_run_config(args, base)
    except ConfigError as e:
        print(f"✗ Invalid configuration: {e}", file=sys.stderr)
        return EXIT_VALIDATION

    report = run_experiment(config)
    for outcome in report.outcomes:
        if outcome.ok:
            print(f"✓ seed {outcome.seed}: {outcome.directory}")
        else:
            print(f"✗ seed {outcome.seed}: {outcome.error}", file=sys.stderr)

    metrics = report.aggregate["metrics"]
    metric = metrics.get("final_average", metrics.get("final_mean"))
    if metric:
        print(f"  mean {metric['mean']:.4f} ± {metric['std']:.4f}")
    print(f"  aggregate: {report.out_dir / AGGREGATE_FILE}")
    return EXIT_OK if report.ok else EXIT_FAILURE


def cmd_validate(args: argparse.Namespace) -> int:
    path = Path(args.config)
    if not path.is_file():
        print(f"Error: File '{args.config}' not found", file=sys.stderr)
        return EXIT_VALIDATION

    linter = ConfigLinter()
    issues = linter.lint_from_file(path)
    linter.print_issues(path, issues)
    exit_code = linter.print_summary(1)
    if exit_code != EXIT_OK:
        return EXIT_VALIDATION

    config = ConfigParser(check_paths=False).parse_from_file(str(path))
    print()
    print("Resolved configuration:")
    print(json.dumps(config.resolved(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayescl",
        description="Run and validate Bayesian continual-learning experiments",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="More log output (-vv)"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run an experiment over its seeds")
    run.add_argument("kind", choices=[k.value for k in ExperimentKind])
    run.add_argument("--config", help="JSON experiment file")
    run.add_argument("--seeds", help="Seed count n (seeds 0..n-1) or a list 1,3,7")
    run.add_argument("--out", help="Output directory (default from the config)")
    run.add_argument("--threads", type=int, help="Seeds run in parallel")
    run.add_argument(
        "--scenario",
        help="Filter stream (balanced, imbalanced) or labelling scenario "
        "(class-incremental, domain-incremental)",
    )
    run.add_argument("--dataset", choices=DATASETS, help="Task stream to build")
    run.add_argument("--data-root", help="Directory holding IDX files")
    run.add_argument("--head-mode", choices=["single", "multi"], help="VCL heads")
    run.set_defaults(handler=cmd_run)

    validate = commands.add_parser(
        "validate", help="Lint a configuration and list its resolved defaults"
    )
    validate.add_argument("--config", required=True, help="JSON experiment file")
    validate.set_defaults(handler=cmd_validate)
    return parser


def main() -> int:
    """Run the main CLI application."""
    parser = build_parser()
    args = parser.parse_args()

    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        print("Interrupted", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

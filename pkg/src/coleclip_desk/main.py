"""Command-line entry point for coleclip-desk.

Subcommands:
- generate: Build a synthetic task stream and write its manifest
- run: Train and evaluate the configured methods over the stream
- report: Re-emit tables (and plots) from a finished run directory
- verify: Run the invariant suite
- ablate: Run the eight mechanism on/off variants over several seeds
- sweep: Grid over the lists in the config's sweep section
- resume: Continue a run from a per-task checkpoint
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .config import Config, ConfigError, default_config_path
from .harness import (
    ExperimentError,
    RunRecord,
    emit_report,
    resume,
    run_ablation,
    run_experiment,
    run_sweep,
)
from .stream import ManifestError, generate_stream, write_manifest
from .training import DivergenceError
from .verification import run_verification

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


def setup_logging(config: Config) -> None:
    """Configure logging based on config settings."""
    logging_config = config.get_logging_config()

    level_name = logging_config.get("level", "INFO")
    level = getattr(logging, level_name.upper(), logging.INFO)

    log_format = logging_config.get(
        "format", "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )

    logging.basicConfig(level=level, format=log_format)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int, help="Seed for the stream, backbone and training")
    common.add_argument(
        "--deterministic", action="store_true", help="Use deterministic torch algorithms"
    )
    common.add_argument("--output", help="Output directory")
    common.add_argument("--order", help="Task order as a comma-separated permutation, e.g. 3,1,2")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config value, e.g. --set train.alpha=0.2 (repeatable)",
    )
    common.add_argument(
        "--plots", action=argparse.BooleanOptionalAction, default=None, help="Draw accuracy curves"
    )

    parser = argparse.ArgumentParser(
        prog="coleclip-desk", description="Open-domain continual learning at desk scale"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("generate", parents=[common], help="Write a stream manifest")
    commands.add_parser("run", parents=[common], help="Train and evaluate")
    report = commands.add_parser("report", parents=[common], help="Emit tables from a run")
    report.add_argument("run_dir", nargs="?", help="Run directory holding run.json")
    verify = commands.add_parser("verify", parents=[common], help="Run the invariant suite")
    verify.add_argument("--gradient-seeds", type=int, default=20)
    ablate = commands.add_parser("ablate", parents=[common], help="Mechanism ablation grid")
    ablate.add_argument("--seeds", default="0,1,2", help="Comma-separated seeds")
    commands.add_parser("sweep", parents=[common], help="Hyperparameter sweep")
    resume_cmd = commands.add_parser("resume", parents=[common], help="Continue from a checkpoint")
    resume_cmd.add_argument("--checkpoint", required=True, help="Checkpoint file or run directory")
    return parser


def _int_list(text: str, what: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ConfigError(f"Invalid {what} '{text}': expected comma-separated integers") from e


def load_config(args: argparse.Namespace) -> Config:
    """Load the config file (or defaults) and apply command-line overrides."""
    if args.config:
        config = Config(args.config)
    elif default_config_path() is not None:
        config = Config()
    else:
        config = Config.from_dict({})

    config.apply_overrides(args.overrides)
    if args.seed is not None:
        config.apply_seed(args.seed)
    if args.deterministic:
        config.set("experiment.deterministic", True)
        config.set("train.deterministic", True)
    if args.output:
        config.set("experiment.output_dir", args.output)
    if args.order:
        config.set("experiment.task_order", _int_list(args.order, "task order"))
    if args.plots is not None:
        config.set("experiment.plots", args.plots)
    return config


def _output_dir(config: Config) -> Path:
    return Path(config.get_experiment_config().output_dir)


def cmd_generate(config: Config) -> int:
    logger = logging.getLogger(__name__)
    stream = generate_stream(config.get_stream_config())
    path = write_manifest(stream, _output_dir(config) / "manifest.yaml")
    logger.info(f"Manifest written: {path}")
    return EXIT_OK


def cmd_run(config: Config) -> int:
    run_experiment(config)
    return EXIT_OK


def cmd_report(config: Config, run_dir: Optional[str]) -> int:
    logger = logging.getLogger(__name__)
    directory = Path(run_dir) if run_dir else _output_dir(config)
    record = RunRecord.load(directory)
    emit_report(record, directory, plots=bool(config.get("experiment.plots", False)))
    for method, result in record.results.items():
        for report in result.reports().values():
            logger.info(f"{method}\n{report.to_markdown()}")
    return EXIT_OK


def cmd_verify(gradient_seeds: int) -> int:
    results = run_verification(gradient_seeds)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point."""
    args = build_parser().parse_args(argv)
    logger = logging.getLogger(__name__)

    try:
        config = load_config(args)
        setup_logging(config)

        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "run":
            return cmd_run(config)
        if args.command == "report":
            return cmd_report(config, args.run_dir)
        if args.command == "verify":
            return cmd_verify(args.gradient_seeds)
        if args.command == "ablate":
            run_ablation(config, _int_list(args.seeds, "seed list"), _output_dir(config) / "ablation")
            return EXIT_OK
        if args.command == "sweep":
            run_sweep(config, _output_dir(config) / "sweep")
            return EXIT_OK
        if args.command == "resume":
            resume(args.checkpoint)
            return EXIT_OK
        return EXIT_FAILURE

    except (ConfigError, ManifestError) as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    except DivergenceError as e:
        print(f"Training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE

    except ExperimentError as e:
        if isinstance(e.__cause__, DivergenceError):
            print(f"Training diverged: {e}", file=sys.stderr)
            return EXIT_DIVERGENCE
        logger.error(f"Experiment failed: {e}")
        return EXIT_FAILURE

    except Exception as e:
        print(f"Fatal error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())

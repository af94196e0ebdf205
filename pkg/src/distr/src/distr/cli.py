import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Optional, Sequence, Union

import tyro
from loguru import logger

from distr.exceptions import ConfigError, DistrError, StageError
from distr.pipeline.experiment import load_config, run_experiment
from distr.pipeline.reports import curves as write_curves
from distr.pipeline.reports import export_replay_comparison, recompute_metrics
from distr.settings import get_settings

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def configure_logging() -> None:
    settings = get_settings()
    logger.remove()
    logger.add(sys.stderr, level=settings.log_level, format=settings.log_format)


def _fail(verb: str, error: DistrError) -> int:
    logger.error(f"{verb} failed: {error}")
    return EXIT_RUNTIME


@dataclass
class Run:
    """Run the configured method over the task sequence for every seed."""

    config: tyro.conf.Positional[Path]
    """Experiment config (TOML)"""

    def execute(self) -> int:
        try:
            experiment = load_config(self.config)
        except ConfigError as e:
            for line in e.diagnostics:
                logger.error(f"{self.config}: {line}")
            return EXIT_CONFIG

        try:
            root = run_experiment(experiment)
        except StageError as e:
            logger.error(f"run failed in stage '{e.stage}' (task {e.task_id}): {e.message}")
            return EXIT_RUNTIME
        except DistrError as e:
            return _fail("run", e)
        print(root)
        return EXIT_OK


@dataclass
class Curves:
    """Write curve.csv and curve.svg of average success per task."""

    run_dir: tyro.conf.Positional[Path]
    """Method or seed directory of a finished run"""

    def execute(self) -> int:
        try:
            paths = write_curves(self.run_dir)
        except DistrError as e:
            return _fail("curves", e)
        for path in paths:
            print(path)
        return EXIT_OK


@dataclass
class ExportReplay:
    """Merge real and generated trajectories of a task and report their MMD^2."""

    run_dir: tyro.conf.Positional[Path]
    """Method or seed directory of a finished run"""
    task: int
    """Task id to compare"""
    seed: Optional[int] = None
    """Seed directory to read; defaults to the first"""

    def execute(self) -> int:
        try:
            print(export_replay_comparison(self.run_dir, self.task, self.seed))
        except DistrError as e:
            return _fail("export-replay", e)
        return EXIT_OK


@dataclass
class Metrics:
    """Recompute metrics.json (and summary.json) from stored results."""

    run_dir: tyro.conf.Positional[Path]
    """Method or seed directory of a finished run"""

    def execute(self) -> int:
        try:
            reports = recompute_metrics(self.run_dir)
        except DistrError as e:
            return _fail("metrics", e)
        for report in reports:
            print(report.model_dump_json())
        return EXIT_OK


Command = Union[
    Annotated[Run, tyro.conf.subcommand("run")],
    Annotated[Curves, tyro.conf.subcommand("curves")],
    Annotated[ExportReplay, tyro.conf.subcommand("export-replay")],
    Annotated[Metrics, tyro.conf.subcommand("metrics")],
]


def main(argv: Optional[Sequence[str]] = None) -> int:
    command = tyro.cli(Command, args=argv, description="Continual RL with diffusion-based trajectory replay.")
    configure_logging()
    return command.execute()


def cli() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    cli()

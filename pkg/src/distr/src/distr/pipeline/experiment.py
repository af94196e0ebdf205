"""Config loading, per-seed orchestration and aggregation across seeds."""
from __future__ import annotations

import hashlib
import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from commons.metrics import RunMetrics
from loguru import logger
from pydantic import ValidationError

from distr.envs.tasksuite import make_suite, success_rate
from distr.evaluation.metrics import (
    SuccessMatrix,
    average_performance,
    export_success_matrix,
    forgetting,
    forgetting_per_task,
    forward_transfer,
    forward_transfer_per_task,
)
from distr.exceptions import ConfigError, StageError
from distr.learners.base import DistrState
from distr.learners.factory import create_learner
from distr.learners.sac import make_policy, train_immediate
from distr.learners.trajdiff import generate_trajectories
from distr.pipeline import artifacts
from distr.pipeline.artifacts import SeedPaths
from distr.seeding import derive_seed
from distr.serialisation import ExperimentConfig, MetricsReport, MetricSummary, ReferenceScores, RunSummary
from distr.settings import Settings, get_settings

SCALAR_METRICS = ("average_performance", "forward_transfer", "forgetting")


# ============ Configuration ============

def _locate(text: str, loc: Sequence) -> Optional[int]:
    """1-based line of the TOML key addressed by a validation-error location."""
    keys = [str(part) for part in loc if isinstance(part, str)]
    if not keys:
        return None
    section, key = (".".join(keys[:-1]), keys[-1]) if len(keys) > 1 else ("", keys[0])
    current = ""
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[([^\[\]]+)\]$", stripped)
        if header:
            current = header.group(1).strip()
            continue
        if current == section and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return number
        if section and current == "" and re.match(rf"^{re.escape(section)}\s*=", stripped):
            return number
    # whole-section errors point at the section header
    for target in (".".join(keys), section):
        for number, line in enumerate(text.splitlines(), start=1):
            if target and line.strip() == f"[{target}]":
                return number
    return None


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}") from e
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        diagnostics = []
        for error in e.errors():
            dotted = ".".join(str(part) for part in error["loc"])
            line = _locate(text, error["loc"])
            prefix = f"line {line}: " if line is not None else ""
            where = f"{dotted}: " if dotted else ""
            diagnostics.append(f"{prefix}{where}{error['msg']}")
        raise ConfigError("invalid experiment config", diagnostics) from e


def load_config(path: Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


# ============ Reference scores ============

def reference_fingerprint(config: ExperimentConfig) -> str:
    payload = "|".join([
        config.suite.model_dump_json(), config.sac.model_dump_json(), str(config.evaluation.n_eval),
    ])
    return hashlib.blake2b(payload.encode("utf-8"), digest_size=16).hexdigest()


def reference_scores(config: ExperimentConfig, seed: int) -> ReferenceScores:
    """Single-task SAC success rate per task from a fresh policy, cached per seed."""
    cache = artifacts.reference_cache(config, seed)
    fingerprint = reference_fingerprint(config)
    cached = artifacts.read_reference(cache)
    if cached is not None and cached.fingerprint == fingerprint:
        logger.info(f"Using cached reference scores from {cache}")
        return cached

    scores = []
    for task in make_suite(config.suite):
        policy = make_policy(task.obs_dim, config.sac, derive_seed(seed, "reference_init", task.task_id))
        policy, _ = train_immediate(task, policy, config.sac.budget_steps,
                                    derive_seed(seed, "reference", task.task_id), config.sac, config.suite.gamma)
        scores.append(success_rate(task, policy, config.evaluation.n_eval, derive_seed(seed, "eval", task.task_id)))
        logger.info(f"Reference score task {task.task_id}: {scores[-1]:.3f}")
    result = ReferenceScores(seed=seed, scores=scores, fingerprint=fingerprint)
    artifacts.write_reference(cache, result)
    return result


# ============ Metrics ============

def build_report(method: str, seed: int, matrix: SuccessMatrix, refs: Optional[ReferenceScores]) -> MetricsReport:
    per_task_ft = forward_transfer_per_task(matrix, refs.scores) if refs is not None else []
    return MetricsReport(
        method=method,
        seed=seed,
        average_performance=average_performance(matrix),
        forward_transfer=forward_transfer(matrix, refs.scores) if refs is not None else None,
        forgetting=forgetting(matrix),
        per_task_FT=per_task_ft,
        per_task_F=forgetting_per_task(matrix),
    )


def summarize(method: str, reports: Sequence[MetricsReport]) -> RunSummary:
    """Mean and sample standard deviation of every scalar metric across seeds."""
    metrics: Dict[str, MetricSummary] = {}
    for name in SCALAR_METRICS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if not values:
            metrics[name] = MetricSummary(mean=None, std=None, n=0)
            continue
        std = float(np.std(values, ddof=1)) if len(values) > 1 else None
        metrics[name] = MetricSummary(mean=float(np.mean(values)), std=std, n=len(values))
    return RunSummary(method=method, seeds=[r.seed for r in reports], metrics=metrics)


# ============ Runs ============

def export_final_replay(config: ExperimentConfig, paths: SeedPaths, state: DistrState, learner, seed: int,
                        settings: Settings) -> None:
    """Generated trajectories for every task from the final denoiser."""
    if state.denoiser is None:
        return
    for task in learner.tasks:
        trajectories = generate_trajectories(state.denoiser, task.task_id, config.agent.n_traj, learner.schedule,
                                             derive_seed(seed, "export", task.task_id))
        artifacts.write_generated(paths, task.task_id, trajectories, settings.float_format)


def run_seed(config: ExperimentConfig, seed: int, settings: Optional[Settings] = None) -> MetricsReport:
    settings = settings or get_settings()
    paths = artifacts.seed_paths(config, seed)
    paths.root.mkdir(parents=True, exist_ok=True)
    sink = logger.add(paths.root / settings.run_log_name, level="DEBUG", format=settings.log_format)
    metrics = RunMetrics(f"{config.method}-seed{seed}")
    try:
        logger.info(f"Starting {config.method} seed {seed} on {config.suite.num_tasks} tasks")
        learner = create_learner(config, metrics)
        state = learner.init_state(seed)
        try:
            learner.evaluate_pre_row(state, seed)
            for task in learner.tasks:
                learner.learn_task(state, task, seed)
                artifacts.write_task_artifacts(paths, state, task.task_id, settings.float_format)
                export_success_matrix(paths.success_matrix, state.success_matrix, settings.float_format)
                metrics.update_system_metrics()
        except StageError as e:
            logger.error(f"Seed {seed} aborted in stage '{e.stage}' on task {e.task_id}")
            if state.success_matrix.trained:
                export_success_matrix(paths.success_matrix, state.success_matrix, settings.float_format)
            raise
        finally:
            metrics.export(paths.metrics_prom)

        export_final_replay(config, paths, state, learner, seed, settings)
        refs = None
        if config.evaluation.compute_reference:
            refs = reference_scores(config, seed)
            artifacts.write_reference(paths.reference, refs)
        report = build_report(config.method, seed, state.success_matrix, refs)
        artifacts.write_metrics_report(paths.metrics_json, report)
        logger.info(f"Seed {seed} done: average performance {report.average_performance:.3f}, "
                    f"forgetting {report.forgetting:.3f}")
        return report
    finally:
        logger.remove(sink)


def run_experiment(config: ExperimentConfig, settings: Optional[Settings] = None) -> Path:
    """Run every seed of `config` and write the aggregate summary; returns the method directory."""
    settings = settings or get_settings()
    root = artifacts.method_dir(config)
    artifacts.write_config_resolved(config)

    if settings.max_workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(settings.max_workers, len(config.seeds))) as pool:
            reports: List[MetricsReport] = list(pool.map(run_seed, [config] * len(config.seeds), config.seeds,
                                                         [settings] * len(config.seeds)))
    else:
        reports = [run_seed(config, seed, settings) for seed in config.seeds]

    artifacts.write_summary(root, summarize(config.method, reports))
    logger.info(f"Run written to {root}")
    return root

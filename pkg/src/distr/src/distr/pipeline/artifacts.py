"""Run-directory layout and persistence.

    <output_dir>/<method>/config.resolved
    <output_dir>/<method>/summary.json
    <output_dir>/<method>/seed_<s>/success_matrix.csv
                                  /priority_records.csv
                                  /metrics.json, metrics.prom, reference.json, run.log
                                  /checkpoints/{policy,denoiser}_after_task_<k>.json
                                  /skilled/<k>_<source>.csv
                                  /replay/<k>_generated.csv
                                  /episodes/task_<k>.csv
                                  /losses/task_<k>.csv
    <output_dir>/reference/seed_<s>.json
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
import tomli_w
from commons.io import atomic_write_csv, atomic_write_json, atomic_write_text

from distr.autodiff.nets import save_checkpoint
from distr.envs.tasksuite import Trajectory, export_trajectories_csv
from distr.exceptions import IncompleteDataError
from distr.learners.base import DistrState, SkilledSet
from distr.learners.sac import export_episode_log
from distr.serialisation import ExperimentConfig, MetricsReport, ReferenceScores, RunSummary, TaskPriorityRecord

CONFIG_RESOLVED = "config.resolved"
SUMMARY = "summary.json"
SUCCESS_MATRIX = "success_matrix.csv"


def method_dir(config: ExperimentConfig) -> Path:
    return Path(config.output_dir) / config.method


def reference_cache(config: ExperimentConfig, seed: int) -> Path:
    return Path(config.output_dir) / "reference" / f"seed_{seed}.json"


@dataclass(frozen=True)
class SeedPaths:
    root: Path

    @property
    def success_matrix(self) -> Path:
        return self.root / SUCCESS_MATRIX

    @property
    def priority_records(self) -> Path:
        return self.root / "priority_records.csv"

    @property
    def metrics_json(self) -> Path:
        return self.root / "metrics.json"

    @property
    def metrics_prom(self) -> Path:
        return self.root / "metrics.prom"

    @property
    def reference(self) -> Path:
        return self.root / "reference.json"

    def checkpoint(self, kind: str, task_id: int) -> Path:
        return self.root / "checkpoints" / f"{kind}_after_task_{task_id}.json"

    def skilled(self, task_id: int, source: str) -> Path:
        return self.root / "skilled" / f"{task_id}_{source}.csv"

    def generated(self, task_id: int) -> Path:
        return self.root / "replay" / f"{task_id}_generated.csv"

    def comparison(self, task_id: int) -> Path:
        return self.root / "replay" / f"{task_id}_comparison.csv"

    def coverage(self, task_id: int) -> Path:
        return self.root / "replay" / f"{task_id}_coverage.json"

    def episodes(self, task_id: int) -> Path:
        return self.root / "episodes" / f"task_{task_id}.csv"

    def losses(self, task_id: int) -> Path:
        return self.root / "losses" / f"task_{task_id}.csv"


def seed_paths(config: ExperimentConfig, seed: int) -> SeedPaths:
    return SeedPaths(method_dir(config) / f"seed_{seed}")


def seed_dirs(run_dir: Path) -> List[Path]:
    """A seed directory itself, or every `seed_*` directory below a method directory."""
    run_dir = Path(run_dir)
    if (run_dir / SUCCESS_MATRIX).exists():
        return [run_dir]
    found = [p for p in run_dir.glob("seed_*") if p.is_dir() and p.name.removeprefix("seed_").isdigit()]
    found.sort(key=lambda p: int(p.name.removeprefix("seed_")))
    if not found:
        raise IncompleteDataError(f"no seed results under {run_dir}")
    return found


# ============ Writers ============

def write_config_resolved(config: ExperimentConfig) -> Path:
    content = tomli_w.dumps(config.model_dump(exclude_none=True))
    return atomic_write_text(method_dir(config) / CONFIG_RESOLVED, content)


def write_priority_records(path: Path, records: Sequence[TaskPriorityRecord], float_format: str) -> Path:
    frame = pd.DataFrame(
        [{"task": r.task_id, "s_v": r.s_v, "s_s": r.s_s, "priority": r.priority} for r in records],
        columns=["task", "s_v", "s_s", "priority"],
    )
    return atomic_write_csv(path, frame, float_format=float_format)


def write_skilled(paths: SeedPaths, skilled: SkilledSet, float_format: str) -> Path:
    return export_trajectories_csv(paths.skilled(skilled.task_id, skilled.source), skilled.trajectories,
                                   source=skilled.source, float_format=float_format)


def write_losses(path: Path, losses: Dict[str, List[float]], float_format: str) -> Path:
    """Long-format per-epoch loss history: one row per (model, epoch)."""
    frame = pd.DataFrame(
        [{"model": model, "epoch": epoch, "loss": loss}
         for model, history in sorted(losses.items()) for epoch, loss in enumerate(history)],
        columns=["model", "epoch", "loss"],
    )
    return atomic_write_csv(path, frame, float_format=float_format)


def write_generated(paths: SeedPaths, task_id: int, trajectories: Sequence[Trajectory], float_format: str) -> Path:
    return export_trajectories_csv(paths.generated(task_id), trajectories, source="generated",
                                   float_format=float_format)


def write_task_artifacts(paths: SeedPaths, state: DistrState, task_id: int, float_format: str) -> None:
    """Everything a finished task leaves behind in the seed directory."""
    save_checkpoint(state.general_policy.trunk, paths.checkpoint("policy", task_id))
    if state.denoiser is not None:
        save_checkpoint(state.denoiser.net, paths.checkpoint("denoiser", task_id))
    if state.current_real is not None:
        write_skilled(paths, state.current_real, float_format)
    for replayed in state.replayed:
        write_skilled(paths, replayed, float_format)
    if state.episode_log:
        export_episode_log(paths.episodes(task_id), state.episode_log, float_format)
    if state.losses:
        write_losses(paths.losses(task_id), state.losses, float_format)
    if state.priority_records:
        write_priority_records(paths.priority_records, state.priority_records, float_format)


def write_metrics_report(path: Path, report: MetricsReport) -> Path:
    return atomic_write_json(path, report.model_dump())


def write_summary(root: Path, summary: RunSummary) -> Path:
    return atomic_write_json(Path(root) / SUMMARY, summary.model_dump())


def write_reference(path: Path, scores: ReferenceScores) -> Path:
    return atomic_write_json(path, scores.model_dump())


def read_reference(path: Path) -> Optional[ReferenceScores]:
    path = Path(path)
    if not path.exists():
        return None
    return ReferenceScores.model_validate_json(path.read_text(encoding="utf-8"))

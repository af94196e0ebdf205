"""Post-run reports computed from a finished run directory."""
import io
from pathlib import Path
from typing import List, Optional

import matplotlib
import numpy as np
import pandas as pd
from commons.io import atomic_write_csv, atomic_write_json, atomic_write_text
from loguru import logger
from matplotlib.figure import Figure
from pydantic import ValidationError

from distr.envs.tasksuite import frame_to_step_rows
from distr.evaluation.metrics import SuccessMatrix, load_success_matrix, mmd
from distr.exceptions import IncompleteDataError
from distr.pipeline import artifacts
from distr.pipeline.artifacts import SeedPaths
from distr.pipeline.experiment import build_report, summarize
from distr.serialisation import CoverageReport, MetricsReport
from distr.settings import get_settings

CURVE_COLUMNS = ["after_task", "avg_success_over_seen_tasks", "avg_success_over_all_tasks"]


# ============ Curves ============

def curve_frame(matrix: SuccessMatrix) -> pd.DataFrame:
    """Per trained task i: mean of s_i(j) over j <= i and over every task (NaN if not all evaluated)."""
    if matrix.trained == 0:
        raise IncompleteDataError("success matrix has no trained rows")
    rows = []
    for i, row in enumerate(matrix.rows):
        over_all = float(np.mean(row)) if not np.any(np.isnan(row)) else np.nan
        rows.append({"after_task": i, "avg_success_over_seen_tasks": float(np.mean(row[:i + 1])),
                     "avg_success_over_all_tasks": over_all})
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def _load_matrices(run_dir: Path) -> List[SuccessMatrix]:
    matrices = []
    for seed_dir in artifacts.seed_dirs(run_dir):
        path = seed_dir / artifacts.SUCCESS_MATRIX
        if not path.exists():
            raise IncompleteDataError(f"{seed_dir} has no {artifacts.SUCCESS_MATRIX}")
        matrices.append(load_success_matrix(path))
    return matrices


def plot_curve(frame: pd.DataFrame, title: str) -> str:
    """Line plot of average success against task index, as deterministic SVG text."""
    fig = Figure(figsize=(6, 4))
    ax = fig.subplots()
    with matplotlib.rc_context({"svg.hashsalt": "distr"}):
        ax.plot(frame["after_task"], frame["avg_success_over_seen_tasks"], marker="o", label="seen tasks")
        if frame["avg_success_over_all_tasks"].notna().any():
            ax.plot(frame["after_task"], frame["avg_success_over_all_tasks"], marker="s", label="all tasks")
        ax.set_xlabel("after task")
        ax.set_ylabel("average success rate")
        ax.set_ylim(-0.05, 1.05)
        ax.set_xticks(frame["after_task"].tolist())
        ax.set_title(title)
        ax.legend()
        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()


def curves(run_dir: Path) -> List[Path]:
    """Write curve.csv and curve.svg, averaging over seeds when given a method directory."""
    run_dir = Path(run_dir)
    frames = [curve_frame(m) for m in _load_matrices(run_dir)]
    lengths = {len(f) for f in frames}
    if len(lengths) != 1:
        raise IncompleteDataError(f"seeds trained different numbers of tasks: {sorted(lengths)}")
    frame = pd.concat(frames).groupby("after_task", as_index=False).mean()[CURVE_COLUMNS]

    settings = get_settings()
    csv_path = atomic_write_csv(run_dir / "curve.csv", frame, float_format=settings.float_format)
    svg_path = atomic_write_text(run_dir / "curve.svg", plot_curve(frame, run_dir.name))
    logger.info(f"Curves written to {csv_path} and {svg_path}")
    return [csv_path, svg_path]


# ============ Replay coverage ============

def _resolve_seed_dir(run_dir: Path, seed: Optional[int]) -> Path:
    run_dir = Path(run_dir)
    if seed is not None:
        return run_dir / f"seed_{seed}"
    return artifacts.seed_dirs(run_dir)[0]


def export_replay_comparison(run_dir: Path, task_id: int, seed: Optional[int] = None) -> Path:
    """Merge real and generated trajectories of one task and record their MMD^2 in a sidecar file."""
    paths = SeedPaths(_resolve_seed_dir(run_dir, seed))
    real_path, generated_path = paths.skilled(task_id, "real"), paths.generated(task_id)
    missing = [str(p) for p in (real_path, generated_path) if not p.exists()]
    if missing:
        raise IncompleteDataError(f"missing trajectory exports for task {task_id}: {missing}")

    real = pd.read_csv(real_path)
    generated = pd.read_csv(generated_path)
    merged = pd.concat([real, generated], ignore_index=True)
    settings = get_settings()
    out = atomic_write_csv(paths.comparison(task_id), merged, float_format=settings.float_format)

    mmd2, bandwidth = mmd(frame_to_step_rows(real), frame_to_step_rows(generated))
    report = CoverageReport(task_id=task_id, mmd2=mmd2, bandwidth=bandwidth,
                            n_real=int(real["traj"].nunique()), n_generated=int(generated["traj"].nunique()))
    atomic_write_json(paths.coverage(task_id), report.model_dump())
    logger.info(f"Task {task_id} coverage: MMD^2 {mmd2:.6f} (bandwidth {bandwidth:.4f})")
    return out


# ============ Metrics ============

def recompute_metrics(run_dir: Path) -> List[MetricsReport]:
    """Recompute metrics.json per seed from the stored matrices and reference scores."""
    run_dir = Path(run_dir)
    reports = []
    for seed_dir in artifacts.seed_dirs(run_dir):
        paths = SeedPaths(seed_dir)
        if not paths.metrics_json.exists():
            raise IncompleteDataError(f"{seed_dir} has no metrics.json; the run did not finish")
        try:
            previous = MetricsReport.model_validate_json(paths.metrics_json.read_text(encoding="utf-8"))
        except ValidationError as e:
            raise IncompleteDataError(f"{paths.metrics_json} is not a metrics report: {e.error_count()} errors") from e
        matrix = load_success_matrix(paths.success_matrix)
        refs = artifacts.read_reference(paths.reference)
        report = build_report(previous.method, previous.seed, matrix, refs)
        artifacts.write_metrics_report(paths.metrics_json, report)
        reports.append(report)

    if len(reports) > 1 or not (run_dir / artifacts.SUCCESS_MATRIX).exists():
        artifacts.write_summary(run_dir, summarize(reports[0].method, reports))
    return reports

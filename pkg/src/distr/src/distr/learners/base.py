"""Learner state and the stage machinery shared by every continual learner."""
from __future__ import annotations

from abc import ABC, abstractmethod
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Literal, Optional, Tuple

from commons.metrics import RunMetrics
from commons.tracking import StageRecord, track_stage
from loguru import logger

from distr.envs.tasksuite import TaskSpec, Trajectory, make_suite, success_rate
from distr.evaluation.metrics import SuccessMatrix
from distr.exceptions import StageError
from distr.learners.priority import specificity_probe
from distr.learners.sac import ActorRegularizer, EpisodeRecord, GaussianPolicy, make_policy, train_immediate
from distr.learners.trajdiff import Denoiser
from distr.seeding import derive_seed
from distr.serialisation import ExperimentConfig, TaskPriorityRecord


@dataclass
class SkilledSet:
    task_id: int
    trajectories: List[Trajectory]
    source: Literal["real", "generated"]

    def __post_init__(self) -> None:
        stray = {t.task_id for t in self.trajectories} - {self.task_id}
        if stray:
            raise ValueError(f"skilled set for task {self.task_id} holds trajectories of tasks {sorted(stray)}")

    def __len__(self) -> int:
        return len(self.trajectories)


@dataclass(frozen=True)
class StageFailure:
    task_id: int
    stage: str
    message: str


@dataclass
class DistrState:
    """Everything a learner carries from one task to the next.

    `current_real` is the only real trajectory data kept, and only until the
    next task starts; `real_archive` is filled by the perfect-replay oracle alone.
    """
    general_policy: GaussianPolicy
    success_matrix: SuccessMatrix
    denoiser: Optional[Denoiser] = None
    priority_records: List[TaskPriorityRecord] = field(default_factory=list)
    stage_log: List[StageRecord] = field(default_factory=list)
    failure: Optional[StageFailure] = None
    current_real: Optional[SkilledSet] = None
    replayed: List[SkilledSet] = field(default_factory=list)
    episode_log: List[EpisodeRecord] = field(default_factory=list)
    real_archive: Dict[int, SkilledSet] = field(default_factory=dict)
    ewc_anchors: list = field(default_factory=list)
    # per-epoch loss history of the current task, keyed "denoiser" and "bc"
    losses: Dict[str, List[float]] = field(default_factory=dict)

    @property
    def tasks_completed(self) -> int:
        return self.success_matrix.trained


class BaseLearner(ABC):
    """Abstract continual learner: one `learn_task` call per task, in order."""

    method: str = ""

    def __init__(self, config: ExperimentConfig, metrics: Optional[RunMetrics] = None) -> None:
        self.config = config
        self.metrics = metrics
        self.tasks: List[TaskSpec] = make_suite(config.suite)

    @property
    def obs_dim(self) -> int:
        return self.tasks[0].obs_dim

    def init_state(self, seed: int) -> DistrState:
        policy = make_policy(self.obs_dim, self.config.sac, derive_seed(seed, "policy_init"))
        return DistrState(general_policy=policy, success_matrix=SuccessMatrix(self.config.suite.num_tasks))

    @abstractmethod
    def learn_task(self, state: DistrState, task: TaskSpec, seed: int, budget: Optional[int] = None) -> DistrState:
        """Learn `task` (the next unseen one) and append a success-matrix row."""
        pass

    # ===== Stages =====

    @contextmanager
    def stage(self, state: DistrState, name: str, task_id: int) -> Iterator[None]:
        """Run a stage under tracking; failures are recorded on the state and re-raised as StageError."""
        try:
            with track_stage(name, task_id, state.stage_log, self.metrics):
                yield
        except StageError:
            raise
        except Exception as e:
            logger.error(f"[task {task_id}] stage '{name}' failed: {e}")
            state.failure = StageFailure(task_id=task_id, stage=name, message=str(e))
            raise StageError(name, task_id, str(e)) from e

    def check_order(self, state: DistrState, task: TaskSpec) -> None:
        expected = state.tasks_completed
        if task.task_id != expected:
            raise ValueError(f"expected task {expected} next, got task {task.task_id}")

    def eval_seed(self, seed: int, task_id: int) -> int:
        # one episode-seed stream per task, shared by every row and by the probe
        return derive_seed(seed, "eval", task_id)

    def evaluate_pre_row(self, state: DistrState, seed: int) -> None:
        """Success of the untrained general policy, the s_{-1} row."""
        targets = self.tasks if self.config.evaluation.evaluate_all_tasks else self.tasks[:1]
        with self.stage(state, "evaluate_pre", -1):
            for task in targets:
                value = success_rate(task, state.general_policy, self.config.evaluation.n_eval,
                                     self.eval_seed(seed, task.task_id))
                state.success_matrix.set_pre(task.task_id, value)
                if self.metrics is not None:
                    self.metrics.track_success(-1, task.task_id, value)

    def specificity_probe(self, state: DistrState, task: TaskSpec, seed: int) -> float:
        with self.stage(state, "specificity_probe", task.task_id):
            s_s = specificity_probe(state.general_policy, task, self.config.evaluation.n_eval,
                                    self.eval_seed(seed, task.task_id))
            state.success_matrix.record_probe(task.task_id, s_s)
        logger.info(f"[task {task.task_id}] specificity probe s_s={s_s:.3f}")
        return s_s

    def train_immediate(
        self,
        state: DistrState,
        task: TaskSpec,
        seed: int,
        init_policy: GaussianPolicy,
        budget: Optional[int] = None,
        regularizer: Optional[ActorRegularizer] = None,
    ) -> Tuple[GaussianPolicy, List[EpisodeRecord]]:
        budget = self.config.sac.budget_steps if budget is None else budget
        with self.stage(state, "train_immediate", task.task_id):
            policy, episode_log = train_immediate(
                task,
                init_policy,
                budget,
                derive_seed(seed, "sac", task.task_id),
                self.config.sac,
                self.config.suite.gamma,
                actor_regularizer=regularizer,
                metrics=self.metrics,
            )
        state.episode_log = episode_log
        return policy, episode_log

    def evaluate(self, state: DistrState, task: TaskSpec, seed: int) -> None:
        """Evaluate the general policy and append row `task.task_id` of the success matrix."""
        i = task.task_id
        last = len(self.tasks) if self.config.evaluation.evaluate_all_tasks else i + 1
        with self.stage(state, "evaluate", i):
            row: List[Optional[float]] = [None] * len(self.tasks)
            for target in self.tasks[:last]:
                row[target.task_id] = success_rate(target, state.general_policy, self.config.evaluation.n_eval,
                                                   self.eval_seed(seed, target.task_id))
                if self.metrics is not None:
                    self.metrics.track_success(i, target.task_id, row[target.task_id])
            state.success_matrix.append_row(row)
        logger.info(f"[task {i}] success over seen tasks: {[round(v, 3) for v in row[:i + 1]]}")

"""Point-mass goal-reaching task sequence.

Every task shares the state space (x, y, vx, vy) and the action space [-1, 1]^2.
Task k places its goal on the unit circle and, on flipped tasks, inverts the
action-to-acceleration map, so that a policy tuned for one task is wrong on
its neighbours.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional, Protocol, Sequence

import numpy as np
import pandas as pd
from commons.io import atomic_write_csv

from distr.exceptions import ShapeError
from distr.seeding import derive_seed, make_rng
from distr.serialisation import SuiteConfig

STATE_DIM = 4
ACTION_DIM = 2
START_BOX = 0.05
CSV_COLUMNS = ["task_id", "traj", "step", "x", "y", "vx", "vy", "ax", "ay", "reward"]


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    goal: np.ndarray
    action_sign: float
    suite: SuiteConfig

    @property
    def horizon(self) -> int:
        return self.suite.horizon

    @property
    def success_radius(self) -> float:
        return self.suite.success_radius

    @property
    def num_tasks(self) -> int:
        return self.suite.num_tasks

    @property
    def obs_dim(self) -> int:
        return STATE_DIM + self.suite.num_tasks


@dataclass
class Trajectory:
    states: np.ndarray      # (H, 4)
    actions: np.ndarray     # (H, 2)
    rewards: np.ndarray     # (H,)
    true_length: int
    success: bool
    task_id: int

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    @property
    def horizon(self) -> int:
        return self.states.shape[0]


class StepResult(NamedTuple):
    next_state: np.ndarray
    reward: float
    done: bool
    success: bool


class Policy(Protocol):
    def act(self, observation: np.ndarray, rng: np.random.Generator, deterministic: bool) -> np.ndarray:
        ...


@dataclass
class FunctionPolicy:
    """Adapts a plain `observation -> action` callable to the Policy protocol."""
    fn: Callable[[np.ndarray], np.ndarray]

    def act(self, observation: np.ndarray, rng: np.random.Generator, deterministic: bool) -> np.ndarray:
        return np.asarray(self.fn(observation), dtype=np.float64)


@dataclass
class GoalController:
    """Scripted PD controller toward one task's goal; it knows that task's action sign."""
    task: TaskSpec
    kp: float = 2.0
    kd: float = 1.5

    def act(self, observation: np.ndarray, rng: np.random.Generator, deterministic: bool) -> np.ndarray:
        position, velocity = observation[0:2], observation[2:4]
        desired = self.kp * (self.task.goal - position) - self.kd * velocity
        return np.clip(self.task.action_sign * desired, -1.0, 1.0)


# ============ Tasks ============

def make_task(k: int, suite_config: SuiteConfig) -> TaskSpec:
    K = suite_config.num_tasks
    if not 0 <= k < K:
        raise ValueError(f"task index {k} out of range for a suite of {K} tasks")
    angle = 2.0 * np.pi * k / K + np.pi / K
    goal = np.array([np.cos(angle), np.sin(angle)], dtype=np.float64)
    sign = -1.0 if (suite_config.flip_even_tasks and k % 2 == 0) else 1.0
    return TaskSpec(task_id=k, goal=goal, action_sign=sign, suite=suite_config)


def make_suite(suite_config: SuiteConfig) -> List[TaskSpec]:
    return [make_task(k, suite_config) for k in range(suite_config.num_tasks)]


def task_onehot(task_id: int, num_tasks: int) -> np.ndarray:
    onehot = np.zeros(num_tasks, dtype=np.float64)
    onehot[task_id] = 1.0
    return onehot


def observation(task: TaskSpec, state: np.ndarray) -> np.ndarray:
    return np.concatenate([state, task_onehot(task.task_id, task.num_tasks)])


def observations(states: np.ndarray, task_id: int, num_tasks: int) -> np.ndarray:
    """Batch version: (N, 4) states -> (N, 4 + K) observations."""
    onehots = np.tile(task_onehot(task_id, num_tasks), (states.shape[0], 1))
    return np.concatenate([states, onehots], axis=1)


# ============ Dynamics ============

def reset(task: TaskSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    position = rng.uniform(-START_BOX, START_BOX, size=2)
    return np.concatenate([position, np.zeros(2)])


def step(task: TaskSpec, state: np.ndarray, action: np.ndarray) -> StepResult:
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (ACTION_DIM,):
        raise ShapeError(f"action must have shape ({ACTION_DIM},), got {action.shape}")
    if not np.all(np.isfinite(action)) or np.any(np.abs(action) > 1.0):
        raise ValueError(f"action {action.tolist()} outside [-1, 1]^2; squash before stepping")

    suite = task.suite
    position, velocity = state[0:2], state[2:4]
    velocity = np.clip(velocity + task.action_sign * suite.accel_gain * suite.dt * action, -suite.vmax, suite.vmax)
    position = position + suite.dt * velocity
    distance = float(np.linalg.norm(position - task.goal))
    success = distance < task.success_radius
    reward = -distance * suite.dt + (1.0 if success else 0.0)
    return StepResult(np.concatenate([position, velocity]), reward, success, success)


# ============ Trajectories ============

@dataclass
class TrajectoryRecorder:
    """Collects one episode and applies the pad rule when finished."""
    task: TaskSpec
    states: List[np.ndarray] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)

    def record(self, state: np.ndarray, action: np.ndarray, reward: float) -> None:
        self.states.append(np.asarray(state, dtype=np.float64))
        self.actions.append(np.asarray(action, dtype=np.float64))
        self.rewards.append(float(reward))

    def finish(self, final_state: np.ndarray, success: bool) -> Trajectory:
        H = self.task.horizon
        length = len(self.states)
        if not 1 <= length <= H:
            raise ShapeError(f"episode length {length} outside [1, {H}]")
        states = np.empty((H, STATE_DIM))
        actions = np.zeros((H, ACTION_DIM))
        rewards = np.zeros(H)
        states[:length] = self.states
        states[length:] = final_state
        actions[:length] = self.actions
        rewards[:length] = self.rewards
        return Trajectory(states, actions, rewards, length, bool(success), self.task.task_id)


def rollout(task: TaskSpec, policy: Policy, seed: int, deterministic: bool) -> Trajectory:
    rng = make_rng(seed, "policy")
    state = reset(task, derive_seed(seed, "reset"))
    recorder = TrajectoryRecorder(task)
    success = False
    for _ in range(task.horizon):
        action = policy.act(observation(task, state), rng, deterministic)
        result = step(task, state, action)
        recorder.record(state, action, result.reward)
        state = result.next_state
        if result.done:
            success = result.success
            break
    return recorder.finish(state, success)


def success_rate(task: TaskSpec, policy: Policy, n_episodes: int, seed: int) -> float:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    successes = sum(
        rollout(task, policy, derive_seed(seed, "episode", i), deterministic=True).success
        for i in range(n_episodes)
    )
    return successes / n_episodes


# ============ CSV export ============

def trajectories_to_frame(trajectories: Sequence[Trajectory], source: Optional[str] = None) -> pd.DataFrame:
    blocks = []
    for index, traj in enumerate(trajectories):
        H = traj.horizon
        block = pd.DataFrame({
            "task_id": np.full(H, traj.task_id, dtype=np.int64),
            "traj": np.full(H, index, dtype=np.int64),
            "step": np.arange(H, dtype=np.int64),
            "x": traj.states[:, 0],
            "y": traj.states[:, 1],
            "vx": traj.states[:, 2],
            "vy": traj.states[:, 3],
            "ax": traj.actions[:, 0],
            "ay": traj.actions[:, 1],
            "reward": traj.rewards,
        })
        blocks.append(block)
    frame = pd.concat(blocks, ignore_index=True) if blocks else pd.DataFrame(columns=CSV_COLUMNS)
    if source is not None:
        frame["source"] = source
    return frame


def export_trajectories_csv(path: Path, trajectories: Sequence[Trajectory], source: Optional[str] = None,
                            float_format: str = "%.17g") -> Path:
    return atomic_write_csv(Path(path), trajectories_to_frame(trajectories, source), float_format=float_format)


def frame_to_step_rows(frame: pd.DataFrame) -> np.ndarray:
    """Per-step (x, y, vx, vy, ax, ay) rows, the granularity used for coverage statistics."""
    return frame[["x", "y", "vx", "vy", "ax", "ay"]].to_numpy(dtype=np.float64)

"""Replay priorities from per-task vulnerability and specificity."""
from typing import List, Literal, Sequence, Tuple

import numpy as np
from loguru import logger

from distr.envs.tasksuite import TaskSpec, rollout, success_rate
from distr.learners.sac import GaussianPolicy, PerturbedPolicy
from distr.seeding import derive_seed
from distr.serialisation import TaskPriorityRecord


def vulnerability(
    policy: GaussianPolicy,
    task: TaskSpec,
    noise_sigma: float,
    n_eval: int,
    n_repeats: int,
    seed: int,
) -> Tuple[float, float, float]:
    """(s_k, s_hat_k, s_v): success before and after perturbing the pre-squash mean.

    Perturbed repeats replay the unperturbed episode starts; only the noise stream differs.
    """
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    if n_eval < 1 or n_repeats < 1:
        raise ValueError("n_eval and n_repeats must be >= 1")

    s_k = success_rate(task, policy, n_eval, seed)
    if noise_sigma == 0:
        s_hat = s_k
    else:
        perturbed = PerturbedPolicy(policy, noise_sigma)
        s_hat = float(np.mean([
            _perturbed_success(task, perturbed, n_eval, seed, repeat) for repeat in range(n_repeats)
        ]))
    s_v = float(np.clip(s_k - s_hat, 0.0, 1.0))
    logger.debug(f"[task {task.task_id}] vulnerability: s_k={s_k:.3f} s_hat={s_hat:.3f} s_v={s_v:.3f}")
    return s_k, s_hat, s_v


def _perturbed_success(task: TaskSpec, perturbed: PerturbedPolicy, n_eval: int, seed: int, repeat: int) -> float:
    successes = 0
    for i in range(n_eval):
        episode_seed = derive_seed(seed, "episode", i)
        trajectory = rollout(task, _RepeatNoise(perturbed, derive_seed(episode_seed, "noise", repeat)), episode_seed,
                             deterministic=True)
        successes += trajectory.success
    return successes / n_eval


class _RepeatNoise:
    """Perturbed policy with its own noise stream, independent of the rollout's rng."""

    def __init__(self, perturbed: PerturbedPolicy, noise_seed: int) -> None:
        self.perturbed = perturbed
        self.rng = np.random.default_rng(noise_seed)

    def act(self, observation: np.ndarray, rng: np.random.Generator, deterministic: bool) -> np.ndarray:
        return self.perturbed.act(observation, self.rng, deterministic)


def specificity_probe(policy: GaussianPolicy, task: TaskSpec, n_eval: int, seed: int) -> float:
    """Success rate of the current general policy on a task it has not trained on yet."""
    return success_rate(task, policy, n_eval, seed)


def make_record(task_id: int, s_k: float, s_hat: float, s_v: float, s_s: float) -> TaskPriorityRecord:
    return TaskPriorityRecord(
        task_id=task_id, s_k=s_k, s_hat_k=s_hat, s_v=s_v, s_s=s_s, priority=(s_v + 1.0 - s_s) / 2.0
    )


def priorities(
    records: Sequence[TaskPriorityRecord],
    mode: Literal["prioritized", "uniform"] = "prioritized",
) -> np.ndarray:
    """Replay probabilities over `records`, in record order."""
    if not records:
        raise ValueError("priorities needs at least one record")
    n = len(records)
    raw = np.array([r.priority for r in records], dtype=np.float64)
    total = raw.sum()
    if mode == "uniform" or total <= 0.0:
        return np.full(n, 1.0 / n)
    return raw / total


def sample_replay_tasks(probs: np.ndarray, budget: int, rng: np.random.Generator) -> List[int]:
    """Up to `budget` distinct indices by successive proportional draws without replacement."""
    if budget < 0:
        raise ValueError(f"replay budget must be >= 0, got {budget}")
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.size
    if n <= budget:
        return list(range(n))

    remaining = list(range(n))
    weights = probs.copy()
    chosen: List[int] = []
    for _ in range(budget):
        pool = weights[remaining]
        total = pool.sum()
        p = pool / total if total > 0 else np.full(len(remaining), 1.0 / len(remaining))
        pick = int(rng.choice(len(remaining), p=p))
        chosen.append(remaining.pop(pick))
    return sorted(chosen)

"""Generative-replay continual learner.

Each task runs a two-fold scheme: an immediate policy learns the task with
SAC, its best late episodes become the task's skilled set, the trajectory
denoiser memorises them alongside regenerated past-task sets, and the general
policy is distilled from the same union with behaviour cloning.
"""
from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np
from commons.metrics import RunMetrics
from loguru import logger

from distr.autodiff import tensor as ad
from distr.autodiff.nets import TensorNet, value_and_gradients
from distr.autodiff.optim import adam_init, adam_step
from distr.autodiff.tensor import Tensor
from distr.envs.tasksuite import TaskSpec, observations
from distr.exceptions import NonFiniteError
from distr.learners.base import BaseLearner, DistrState, SkilledSet
from distr.learners.priority import make_record, priorities, sample_replay_tasks, vulnerability
from distr.learners.sac import ActorRegularizer, EpisodeRecord, GaussianPolicy, action_log_prob
from distr.learners.trajdiff import continual_fit, generate_trajectories, make_denoiser, make_schedule
from distr.seeding import derive_seed, make_rng
from distr.serialisation import AgentConfig, ExperimentConfig


# ============ Skilled trajectories ============

def select_skilled(episode_log: Sequence[EpisodeRecord], n_traj: int, window: int) -> SkilledSet:
    """Top `n_traj` returns among the last `window` episodes; ties go to the later episode."""
    if not episode_log:
        raise ValueError("no completed episodes to select skilled trajectories from")
    recent = list(episode_log[-window:])
    ranked = sorted(recent, key=lambda e: (e.episode_return, e.episode), reverse=True)[:n_traj]
    task_id = ranked[0].trajectory.task_id
    if len(ranked) < n_traj:
        logger.warning(f"[task {task_id}] only {len(ranked)} episodes available, wanted {n_traj} skilled trajectories")
    return SkilledSet(task_id=task_id, trajectories=[e.trajectory for e in ranked], source="real")


def bc_pairs(datasets: Sequence[SkilledSet], num_tasks: int) -> Tuple[np.ndarray, np.ndarray]:
    """(obs, action) rows of every step, pad steps included."""
    obs, actions = [], []
    for dataset in datasets:
        for trajectory in dataset.trajectories:
            obs.append(observations(trajectory.states, dataset.task_id, num_tasks))
            actions.append(trajectory.actions)
    return np.concatenate(obs), np.concatenate(actions)


# ============ Behaviour cloning ============

def bc_objective(net: TensorNet, obs: np.ndarray, actions: np.ndarray, policy: GaussianPolicy) -> Tensor:
    return -ad.mean(action_log_prob(net, obs, actions, policy))


def bc_loss(policy: GaussianPolicy, obs: np.ndarray, actions: np.ndarray) -> float:
    """Mean negative log-likelihood of `actions` under the tanh-Gaussian policy."""
    loss = bc_objective(TensorNet(policy.trunk, requires_grad=False), obs, actions, policy).item()
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite behaviour-cloning loss {loss}")
    return loss


def distill_general(
    policy: GaussianPolicy,
    datasets: Sequence[SkilledSet],
    epochs: int,
    seed: int,
    config: AgentConfig,
    num_tasks: int,
) -> Tuple[GaussianPolicy, List[float]]:
    """Minimise the BC loss over the union of all datasets, warm-starting from `policy`.

    Returns the distilled policy and the mean loss per epoch.
    """
    if not datasets:
        raise ValueError("distillation needs at least one dataset")
    obs, actions = bc_pairs(datasets, num_tasks)
    rng = np.random.default_rng(seed)
    optimizer = adam_init(policy.trunk, lr=config.bc_lr)
    trunk = policy.trunk
    n = obs.shape[0]
    history: List[float] = []

    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.bc_batch_size):
            idx = order[start:start + config.bc_batch_size]
            loss, grads = value_and_gradients(
                trunk, lambda net, b: bc_objective(net, b[0], b[1], policy), (obs[idx], actions[idx])
            )
            trunk, optimizer = adam_step(trunk, grads, optimizer)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if (epoch + 1) % 25 == 0:
            logger.debug(f"BC epoch {epoch + 1}/{epochs} | loss {history[-1]:.4f}")

    if history:
        logger.info(f"Distilled general policy on {n} pairs from {len(datasets)} datasets: "
                    f"BC loss {history[0]:.4f} -> {history[-1]:.4f}")
    return policy.with_trunk(trunk), history


def bc_regularizer(datasets: Sequence[SkilledSet], num_tasks: int, policy: GaussianPolicy, lambda_bc: float,
                   batch_size: int, seed: int) -> ActorRegularizer:
    """lambda_bc * sum over datasets of a fresh BC minibatch loss, evaluated at every actor update."""
    pairs = [bc_pairs([dataset], num_tasks) for dataset in datasets]
    rng = np.random.default_rng(seed)

    def regularizer(net: TensorNet) -> Tensor:
        total = None
        for obs, actions in pairs:
            idx = rng.integers(0, obs.shape[0], size=min(batch_size, obs.shape[0]))
            term = bc_objective(net, obs[idx], actions[idx], policy)
            total = term if total is None else total + term
        return lambda_bc * total

    return regularizer


# ============ Learners ============

class DistrLearner(BaseLearner):
    """Decoupled scheme: SAC immediate policy, generative replay, BC-distilled general policy."""

    method = "distr"

    def __init__(self, config: ExperimentConfig, metrics: Optional[RunMetrics] = None) -> None:
        super().__init__(config, metrics)
        diffusion = config.diffusion
        self.schedule = make_schedule(diffusion.steps, diffusion.beta_start, diffusion.beta_end)

    def init_state(self, seed: int) -> DistrState:
        state = super().init_state(seed)
        state.denoiser = make_denoiser(self.config.diffusion, self.config.suite, derive_seed(seed, "denoiser_init"))
        return state

    # ===== Stages =====

    def measure_vulnerability(self, state: DistrState, task: TaskSpec, policy: GaussianPolicy, s_s: float,
                              seed: int) -> None:
        cfg = self.config.priority
        with self.stage(state, "vulnerability", task.task_id):
            s_k, s_hat, s_v = vulnerability(policy, task, cfg.noise_sigma, self.config.evaluation.n_eval,
                                            cfg.n_repeats, self.eval_seed(seed, task.task_id))
            state.priority_records.append(make_record(task.task_id, s_k, s_hat, s_v, s_s))
        record = state.priority_records[-1]
        logger.info(f"[task {task.task_id}] s_v={record.s_v:.3f} s_s={record.s_s:.3f} priority={record.priority:.3f}")

    def choose_replay_tasks(self, state: DistrState, task: TaskSpec, seed: int) -> List[int]:
        past = [r for r in state.priority_records if r.task_id < task.task_id]
        if not past:
            return []
        probs = priorities(past, self.config.priority.mode)
        picks = sample_replay_tasks(probs, self.config.priority.replay_budget,
                                    make_rng(seed, "replay", task.task_id))
        chosen = [past[i].task_id for i in picks]
        logger.info(f"[task {task.task_id}] replay probabilities {np.round(probs, 3).tolist()} -> tasks {chosen}")
        return chosen

    def replay_sets(self, state: DistrState, task: TaskSpec, seed: int) -> List[SkilledSet]:
        """Regenerate skilled sets of the chosen past tasks from the current denoiser."""
        with self.stage(state, "generate_replay", task.task_id):
            replayed = [
                SkilledSet(
                    task_id=i,
                    trajectories=generate_trajectories(state.denoiser, i, self.config.agent.n_traj, self.schedule,
                                                       derive_seed(seed, "generate", task.task_id, i)),
                    source="generated",
                )
                for i in self.choose_replay_tasks(state, task, seed)
            ]
        state.replayed = replayed
        return replayed

    def fit_denoiser(self, state: DistrState, task: TaskSpec, real: SkilledSet, replayed: List[SkilledSet],
                     seed: int) -> None:
        diffusion = self.config.diffusion
        with self.stage(state, "fit_denoiser", task.task_id):
            state.denoiser, history = continual_fit(
                state.denoiser, real, replayed, diffusion.epochs, derive_seed(seed, "diffusion", task.task_id),
                self.schedule, diffusion.batch_size,
            )
        state.losses["denoiser"] = history

    def distill(self, state: DistrState, task: TaskSpec, datasets: List[SkilledSet], seed: int) -> None:
        agent = self.config.agent
        with self.stage(state, "distill", task.task_id):
            state.general_policy, history = distill_general(
                state.general_policy, datasets, agent.bc_epochs, derive_seed(seed, "distill", task.task_id), agent,
                self.config.suite.num_tasks,
            )
        state.losses["bc"] = history

    def select(self, state: DistrState, task: TaskSpec, episode_log: List[EpisodeRecord]) -> SkilledSet:
        agent = self.config.agent
        with self.stage(state, "select_skilled", task.task_id):
            real = select_skilled(episode_log, agent.n_traj, agent.window)
        state.current_real = real
        return real

    # ===== Pipeline =====

    def learn_task(self, state: DistrState, task: TaskSpec, seed: int, budget: Optional[int] = None) -> DistrState:
        self.check_order(state, task)
        state.current_real = None
        state.replayed = []
        state.losses = {}

        s_s = self.specificity_probe(state, task, seed)
        immediate, episode_log = self.train_immediate(state, task, seed, state.general_policy, budget)
        real = self.select(state, task, episode_log)
        self.measure_vulnerability(state, task, immediate, s_s, seed)
        replayed = self.past_sets(state, task, seed)
        self.memorise(state, task, real, replayed, seed)
        self.distill(state, task, [real, *replayed], seed)
        self.evaluate(state, task, seed)
        return state

    def past_sets(self, state: DistrState, task: TaskSpec, seed: int) -> List[SkilledSet]:
        return self.replay_sets(state, task, seed)

    def memorise(self, state: DistrState, task: TaskSpec, real: SkilledSet, replayed: List[SkilledSet],
                 seed: int) -> None:
        self.fit_denoiser(state, task, real, replayed, seed)


class CoupledLearner(DistrLearner):
    """Single-policy ablation: SAC loss plus lambda_bc-weighted BC on generated past-task sets."""

    method = "distr_coupled"

    def learn_task(self, state: DistrState, task: TaskSpec, seed: int, budget: Optional[int] = None) -> DistrState:
        self.check_order(state, task)
        state.current_real = None
        state.replayed = []
        state.losses = {}
        agent = self.config.agent

        s_s = self.specificity_probe(state, task, seed)
        replayed = self.replay_sets(state, task, seed)
        regularizer = None
        if replayed and agent.lambda_bc > 0:
            regularizer = bc_regularizer(replayed, self.config.suite.num_tasks, state.general_policy,
                                         agent.lambda_bc, agent.bc_batch_size, derive_seed(seed, "bc_reg", task.task_id))
        policy, episode_log = self.train_immediate(state, task, seed, state.general_policy, budget, regularizer)
        state.general_policy = policy
        real = self.select(state, task, episode_log)
        self.measure_vulnerability(state, task, policy, s_s, seed)
        self.fit_denoiser(state, task, real, replayed, seed)
        self.evaluate(state, task, seed)
        return state

"""Soft actor-critic on the numpy autodiff stack.

Produces the skilled per-task policy. Critics are task-transient: each call of
`train_immediate` starts fresh critics and a fresh replay buffer, and only the
policy carries over between tasks.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, List, Literal, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from commons.io import atomic_write_csv
from commons.metrics import RunMetrics
from loguru import logger

from distr.autodiff import tensor as ad
from distr.autodiff.nets import NetParams, TensorNet, forward, net_init, value_and_grad_arrays, value_and_gradients
from distr.autodiff.optim import AdamState, adam_init, adam_step, adam_update
from distr.autodiff.tensor import Tensor
from distr.envs.tasksuite import (
    ACTION_DIM,
    TaskSpec,
    Trajectory,
    TrajectoryRecorder,
    observation,
    reset,
    step,
)
from distr.exceptions import ShapeError
from distr.seeding import derive_seed, make_rng
from distr.serialisation import SacConfig

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
TANH_EPS = 1e-6
ACTION_CLAMP = 1.0 - 1e-6

ActorRegularizer = Callable[[TensorNet], Tensor]


# ============ Policy ============

@dataclass(frozen=True)
class GaussianPolicy:
    """Tanh-squashed diagonal Gaussian; the trunk emits (mean, log_std) per action dim."""
    trunk: NetParams
    log_std_min: float = -5.0
    log_std_max: float = 2.0

    def __post_init__(self) -> None:
        if self.trunk.out_dim % 2:
            raise ShapeError(f"policy trunk must emit (mean, log_std) pairs, got width {self.trunk.out_dim}")

    @property
    def action_dim(self) -> int:
        return self.trunk.out_dim // 2

    @property
    def obs_dim(self) -> int:
        return self.trunk.in_dim

    def mean_log_std(self, obs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        out = forward(self.trunk, obs)
        A = self.action_dim
        return out[:, :A], np.clip(out[:, A:], self.log_std_min, self.log_std_max)

    def with_trunk(self, trunk: NetParams) -> "GaussianPolicy":
        return replace(self, trunk=trunk)

    def act(self, observation: np.ndarray, rng: np.random.Generator, deterministic: bool) -> np.ndarray:
        mode = "deterministic" if deterministic else "stochastic"
        action, _ = sample_action(self, observation, mode, rng)
        return action


@dataclass(frozen=True)
class PerturbedPolicy:
    """Deterministic policy with N(0, sigma^2) noise added to the pre-squash mean."""
    policy: GaussianPolicy
    noise_sigma: float

    def act(self, observation: np.ndarray, rng: np.random.Generator, deterministic: bool) -> np.ndarray:
        mu, _ = self.policy.mean_log_std(observation.reshape(1, -1))
        noise = self.noise_sigma * rng.standard_normal(mu.shape) if self.noise_sigma > 0 else 0.0
        return np.tanh(mu + noise)[0]


def make_policy(obs_dim: int, config: SacConfig, seed: int, action_dim: int = ACTION_DIM) -> GaussianPolicy:
    sizes = [obs_dim, *config.hidden_sizes, 2 * action_dim]
    return GaussianPolicy(
        trunk=net_init(sizes, config.activation, seed),
        log_std_min=config.log_std_min,
        log_std_max=config.log_std_max,
    )


def sample_action(
    policy: GaussianPolicy,
    obs: np.ndarray,
    mode: Literal["stochastic", "deterministic"],
    rng: Optional[np.random.Generator],
) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (action, log_prob). A 1-D observation gives a 1-D action and a scalar log_prob."""
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    mu, log_std = policy.mean_log_std(obs.reshape(1, -1) if single else obs)
    std = np.exp(log_std)

    if mode == "deterministic":
        u = mu
        xi = np.zeros_like(mu)
    elif mode == "stochastic":
        xi = rng.standard_normal(mu.shape)
        u = mu + std * xi
    else:
        raise ValueError(f"unknown sampling mode '{mode}'")

    action = np.tanh(u)
    log_prob = np.sum(-0.5 * xi * xi - log_std - HALF_LOG_2PI, axis=1)
    log_prob -= np.sum(np.log(1.0 - action * action + TANH_EPS), axis=1)
    if single:
        return action[0], log_prob[0]
    return action, log_prob


def _split_head(net: TensorNet, obs, policy: GaussianPolicy) -> Tuple[Tensor, Tensor]:
    out = net(obs)
    A = policy.action_dim
    return out[:, :A], ad.clip(out[:, A:], policy.log_std_min, policy.log_std_max)


def reparameterized_log_prob(net: TensorNet, obs: np.ndarray, xi: np.ndarray, policy: GaussianPolicy) -> Tuple[Tensor, Tensor]:
    """(action, log_prob) graph for a = tanh(mu + sigma * xi) with fixed noise xi."""
    mu, log_std = _split_head(net, obs, policy)
    action = ad.tanh(mu + ad.exp(log_std) * xi)
    gaussian = (-0.5 * np.square(xi)) - log_std - HALF_LOG_2PI
    jacobian = ad.log(1.0 - ad.square(action) + TANH_EPS)
    return action, gaussian.sum(axis=1) - jacobian.sum(axis=1)


def action_log_prob(net: TensorNet, obs: np.ndarray, actions: np.ndarray, policy: GaussianPolicy) -> Tensor:
    """log pi(a|s) per row for given actions, via atanh of the clamped action."""
    actions = np.clip(np.asarray(actions, dtype=np.float64), -ACTION_CLAMP, ACTION_CLAMP)
    u = np.arctanh(actions)
    mu, log_std = _split_head(net, obs, policy)
    z = (u - mu) * ad.exp(-log_std)
    gaussian = -0.5 * ad.square(z) - log_std - HALF_LOG_2PI
    jacobian = np.log(1.0 - actions * actions + TANH_EPS).sum(axis=1)
    return gaussian.sum(axis=1) - jacobian


# ============ Replay buffer ============

class Batch(NamedTuple):
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions, owned by a single training run."""

    def __init__(self, capacity: int, obs_dim: int, action_dim: int) -> None:
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action, reward: float, next_obs, done: float) -> None:
        self.obs[self.ptr] = obs
        self.actions[self.ptr] = action
        self.rewards[self.ptr] = reward
        self.next_obs[self.ptr] = next_obs
        self.dones[self.ptr] = done
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx])


# ============ Learner state ============

@dataclass
class SacState:
    policy: GaussianPolicy
    q1: NetParams
    q2: NetParams
    q1_target: NetParams
    q2_target: NetParams
    log_alpha: float
    target_entropy: float
    buffer: ReplayBuffer
    policy_opt: AdamState
    q1_opt: AdamState
    q2_opt: AdamState
    alpha_opt: AdamState
    config: SacConfig
    gamma: float

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))


class SacLosses(NamedTuple):
    critic1: float
    critic2: float
    actor: float
    alpha_loss: float
    alpha: float


def make_sac_state(policy: GaussianPolicy, config: SacConfig, gamma: float, seed: int) -> SacState:
    critic_sizes = [policy.obs_dim + policy.action_dim, *config.hidden_sizes, 1]
    q1 = net_init(critic_sizes, config.activation, derive_seed(seed, "critic", 1))
    q2 = net_init(critic_sizes, config.activation, derive_seed(seed, "critic", 2))
    log_alpha = float(np.log(config.init_alpha))
    target_entropy = -float(policy.action_dim) if config.target_entropy is None else float(config.target_entropy)
    return SacState(
        policy=policy,
        q1=q1,
        q2=q2,
        q1_target=q1.copy(),
        q2_target=q2.copy(),
        log_alpha=log_alpha,
        target_entropy=target_entropy,
        buffer=ReplayBuffer(config.buffer_capacity, policy.obs_dim, policy.action_dim),
        policy_opt=adam_init(policy.trunk, lr=config.lr),
        q1_opt=adam_init(q1, lr=config.lr),
        q2_opt=adam_init(q2, lr=config.lr),
        alpha_opt=adam_init([np.array(log_alpha)], lr=config.lr),
        config=config,
        gamma=gamma,
    )


def critic_targets(state: SacState, batch: Batch, rng: np.random.Generator) -> np.ndarray:
    """y = r + gamma (1 - done) (min target Q(s', a') - alpha log pi(a'|s')), plain arrays only."""
    next_actions, next_log_prob = sample_action(state.policy, batch.next_obs, "stochastic", rng)
    sa = np.concatenate([batch.next_obs, next_actions], axis=1)
    q_next = np.minimum(forward(state.q1_target, sa), forward(state.q2_target, sa))[:, 0]
    soft_value = q_next - state.alpha * next_log_prob
    return (batch.rewards + state.gamma * (1.0 - batch.dones) * soft_value).reshape(-1, 1)


def critic_loss(net: TensorNet, batch: Batch, targets: np.ndarray) -> Tensor:
    q = net(np.concatenate([batch.obs, batch.actions], axis=1))
    return ad.mean(ad.square(q - targets))


def polyak(target: NetParams, source: NetParams, tau: float) -> NetParams:
    return target.with_arrays([(1.0 - tau) * t + tau * s for t, s in zip(target.arrays(), source.arrays())])


def sac_update(
    state: SacState,
    batch: Batch,
    rng: np.random.Generator,
    actor_regularizer: Optional[ActorRegularizer] = None,
) -> Tuple[SacState, SacLosses]:
    if len(state.buffer) == 0:
        raise ValueError("sac_update called with an empty replay buffer")

    # Critics regress on a detached target
    targets = critic_targets(state, batch, rng)
    loss1, grads1 = value_and_gradients(state.q1, lambda net, b: critic_loss(net, b, targets), batch)
    loss2, grads2 = value_and_gradients(state.q2, lambda net, b: critic_loss(net, b, targets), batch)
    q1, q1_opt = adam_step(state.q1, grads1, state.q1_opt)
    q2, q2_opt = adam_step(state.q2, grads2, state.q2_opt)

    # Actor against the updated critics
    alpha = state.alpha
    xi = rng.standard_normal((batch.obs.shape[0], state.policy.action_dim))
    critic1, critic2 = TensorNet(q1, requires_grad=False), TensorNet(q2, requires_grad=False)
    sampled_log_prob: List[np.ndarray] = []

    def actor_loss(net: TensorNet, obs: np.ndarray) -> Tensor:
        action, log_prob = reparameterized_log_prob(net, obs, xi, state.policy)
        sampled_log_prob.append(log_prob.value.copy())
        sa = ad.concat([obs, action], axis=1)
        q = ad.minimum(critic1(sa), critic2(sa))[:, 0]
        loss = ad.mean(alpha * log_prob - q)
        if actor_regularizer is not None:
            loss = loss + actor_regularizer(net)
        return loss

    loss_actor, policy_grads = value_and_gradients(state.policy.trunk, actor_loss, batch.obs)
    trunk, policy_opt = adam_step(state.policy.trunk, policy_grads, state.policy_opt)

    # Temperature, parameterised through its log so alpha stays positive
    entropy_gap = float(np.mean(sampled_log_prob[-1] + state.target_entropy))
    loss_alpha, (grad_log_alpha,) = value_and_grad_arrays(
        lambda log_alpha: -(ad.exp(log_alpha) * entropy_gap), [np.array(state.log_alpha)]
    )
    (log_alpha,), alpha_opt = adam_update([np.array(state.log_alpha)], [grad_log_alpha], state.alpha_opt)

    tau = state.config.tau
    new_state = replace(
        state,
        policy=state.policy.with_trunk(trunk),
        q1=q1,
        q2=q2,
        q1_target=polyak(state.q1_target, q1, tau),
        q2_target=polyak(state.q2_target, q2, tau),
        log_alpha=float(log_alpha),
        policy_opt=policy_opt,
        q1_opt=q1_opt,
        q2_opt=q2_opt,
        alpha_opt=alpha_opt,
    )
    return new_state, SacLosses(loss1, loss2, loss_actor, loss_alpha, new_state.alpha)


# ============ Per-task training ============

@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    episode_return: float
    success: bool
    trajectory: Trajectory


def train_immediate(
    task: TaskSpec,
    init_policy: GaussianPolicy,
    budget_steps: int,
    seed: int,
    config: SacConfig,
    gamma: float,
    actor_regularizer: Optional[ActorRegularizer] = None,
    metrics: Optional[RunMetrics] = None,
) -> Tuple[GaussianPolicy, List[EpisodeRecord]]:
    """Run SAC on one task from `init_policy` for `budget_steps` environment steps."""
    if budget_steps < config.warmup_steps:
        logger.warning(
            f"[task {task.task_id}] SAC budget {budget_steps} is below warmup {config.warmup_steps}; "
            f"no gradient updates will run"
        )

    state = make_sac_state(init_policy, config, gamma, derive_seed(seed, "init"))
    act_rng = make_rng(seed, "act")
    update_rng = make_rng(seed, "update")

    episode_log: List[EpisodeRecord] = []
    episode = 0
    env_state = reset(task, derive_seed(seed, "reset", episode))
    recorder = TrajectoryRecorder(task)
    n_updates = 0

    for t in range(budget_steps):
        obs = observation(task, env_state)
        action, _ = sample_action(state.policy, obs, "stochastic", act_rng)
        result = step(task, env_state, action)
        # time-limit truncation is not a terminal transition
        state.buffer.add(obs, action, result.reward, observation(task, result.next_state), float(result.done))
        recorder.record(env_state, action, result.reward)
        env_state = result.next_state

        if result.done or len(recorder.states) == task.horizon:
            trajectory = recorder.finish(env_state, result.success)
            episode_log.append(EpisodeRecord(
                episode=episode,
                steps=trajectory.true_length,
                episode_return=trajectory.episode_return,
                success=trajectory.success,
                trajectory=trajectory,
            ))
            if metrics is not None:
                metrics.track_episode(task.task_id)
            episode += 1
            env_state = reset(task, derive_seed(seed, "reset", episode))
            recorder = TrajectoryRecorder(task)

        if t >= config.warmup_steps:
            batch = state.buffer.sample(config.batch_size, update_rng)
            state, losses = sac_update(state, batch, update_rng, actor_regularizer)
            n_updates += 1
            if metrics is not None:
                metrics.track_update("sac")
            if n_updates % 5000 == 0:
                recent = episode_log[-20:]
                mean_return = np.mean([e.episode_return for e in recent]) if recent else float("nan")
                logger.debug(
                    f"[task {task.task_id}] step {t + 1}/{budget_steps} | critic {losses.critic1:.4f} | "
                    f"actor {losses.actor:.4f} | alpha {losses.alpha:.4f} | recent return {mean_return:.3f}"
                )

    if metrics is not None:
        metrics.track_env_steps(task.task_id, budget_steps)
    successes = sum(e.success for e in episode_log)
    logger.info(
        f"[task {task.task_id}] SAC finished: {budget_steps} steps, {n_updates} updates, "
        f"{len(episode_log)} episodes ({successes} successful)"
    )
    return state.policy, episode_log


def episode_log_frame(episode_log: List[EpisodeRecord]) -> pd.DataFrame:
    return pd.DataFrame({
        "episode": [e.episode for e in episode_log],
        "steps": [e.steps for e in episode_log],
        "return": [e.episode_return for e in episode_log],
        "success": [int(e.success) for e in episode_log],
    }, columns=["episode", "steps", "return", "success"])


def export_episode_log(path: Path, episode_log: List[EpisodeRecord], float_format: str = "%.17g") -> Path:
    return atomic_write_csv(Path(path), episode_log_frame(episode_log), float_format=float_format)

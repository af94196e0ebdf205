"""Task-conditioned denoising diffusion over whole trajectories.

A trajectory is an H x D matrix of per-step (state, action) rows, normalised
to [-1, 1] by fixed environment bounds and flattened step-major into the
denoiser input together with a sinusoidal step embedding and a task one-hot.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from distr.autodiff import tensor as ad
from distr.autodiff.nets import NetParams, TensorNet, forward, net_init, value_and_gradients
from distr.autodiff.optim import AdamState, adam_init, adam_step
from distr.envs.tasksuite import ACTION_DIM, STATE_DIM, Trajectory, task_onehot
from distr.exceptions import ShapeError
from distr.serialisation import DiffusionConfig, SuiteConfig

if TYPE_CHECKING:
    from distr.learners.base import SkilledSet

STEP_DIM = STATE_DIM + ACTION_DIM
POSITION_BOUND = 2.0


# ============ Noise schedule ============

@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def sigmas(self) -> np.ndarray:
        return np.sqrt(self.betas)


def make_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta schedule from beta_start to beta_end over T steps."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule(np.linspace(beta_start, beta_end, T))


def _check_step(t: Union[int, np.ndarray], schedule: NoiseSchedule) -> np.ndarray:
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.T):
        raise ValueError(f"diffusion step must lie in [1, {schedule.T}], got {t.tolist()}")
    return t


def _per_item(values: np.ndarray, ndim: int) -> np.ndarray:
    return values.reshape(values.shape + (1,) * (ndim - values.ndim)) if values.ndim else values


# ============ Normalisation ============

@dataclass
class TrajTensor:
    data: np.ndarray    # (H, D) in [-1, 1]
    task_id: int


def trajectory_scales(suite: SuiteConfig) -> np.ndarray:
    return np.array([POSITION_BOUND, POSITION_BOUND, suite.vmax, suite.vmax, 1.0, 1.0])


def normalize(trajectory: Trajectory, scales: np.ndarray) -> TrajTensor:
    data = np.concatenate([trajectory.states, trajectory.actions], axis=1) / scales
    return TrajTensor(data=data, task_id=trajectory.task_id)


def denormalize(tensor: TrajTensor, scales: np.ndarray) -> Trajectory:
    """Generated trajectories carry no rewards and are treated as full-length, unsuccessful episodes."""
    data = tensor.data * scales
    H = data.shape[0]
    return Trajectory(
        states=data[:, :STATE_DIM].copy(),
        actions=data[:, STATE_DIM:].copy(),
        rewards=np.zeros(H),
        true_length=H,
        success=False,
        task_id=tensor.task_id,
    )


# ============ Denoiser ============

@dataclass(frozen=True)
class Denoiser:
    net: NetParams
    optimizer: AdamState
    horizon: int
    num_tasks: int
    t_embed_dim: int
    scales: np.ndarray

    @property
    def flat_dim(self) -> int:
        return self.horizon * STEP_DIM

    def __post_init__(self) -> None:
        expected_in = self.flat_dim + self.t_embed_dim + self.num_tasks
        if self.net.in_dim != expected_in or self.net.out_dim != self.flat_dim:
            raise ShapeError(
                f"denoiser net maps {self.net.in_dim} -> {self.net.out_dim}, "
                f"expected {expected_in} -> {self.flat_dim}"
            )


def make_denoiser(config: DiffusionConfig, suite: SuiteConfig, seed: int) -> Denoiser:
    flat = suite.horizon * STEP_DIM
    sizes = [flat + config.t_embed_dim + suite.num_tasks, *config.hidden_sizes, flat]
    net = net_init(sizes, config.activation, seed)
    return Denoiser(
        net=net,
        optimizer=adam_init(net, lr=config.lr),
        horizon=suite.horizon,
        num_tasks=suite.num_tasks,
        t_embed_dim=config.t_embed_dim,
        scales=trajectory_scales(suite),
    )


def time_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding, (B,) steps -> (B, dim) with sin and cos halves."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def denoiser_inputs(denoiser: Denoiser, x: np.ndarray, t: np.ndarray, task_ids: np.ndarray) -> np.ndarray:
    if x.ndim != 3 or x.shape[1:] != (denoiser.horizon, STEP_DIM):
        raise ShapeError(f"trajectory batch must be (B, {denoiser.horizon}, {STEP_DIM}), got {x.shape}")
    B = x.shape[0]
    onehots = np.stack([task_onehot(int(k), denoiser.num_tasks) for k in np.broadcast_to(task_ids, (B,))])
    steps = np.broadcast_to(np.asarray(t), (B,))
    return np.concatenate([x.reshape(B, -1), time_embedding(steps, denoiser.t_embed_dim), onehots], axis=1)


def predict_noise(denoiser: Denoiser, x: np.ndarray, t, task_ids) -> np.ndarray:
    return forward(denoiser.net, denoiser_inputs(denoiser, x, t, task_ids)).reshape(x.shape)


# ============ Forward and reverse process ============

def q_sample(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps; `t` may be one step or one per leading item."""
    if np.shape(eps) != np.shape(x0):
        raise ShapeError(f"noise shape {np.shape(eps)} differs from data shape {np.shape(x0)}")
    t = _check_step(t, schedule)
    alpha_bar = _per_item(schedule.alpha_bars[t - 1], np.ndim(x0))
    return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * eps


def denoise_step(
    denoiser: Denoiser,
    x_t: np.ndarray,
    t: int,
    task_id: int,
    schedule: NoiseSchedule,
    z: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One reverse step for a single (H, D) trajectory or an (n, H, D) batch."""
    _check_step(t, schedule)
    single = x_t.ndim == 2
    x = x_t[None] if single else x_t
    if z is not None and np.shape(z) != np.shape(x_t):
        raise ShapeError(f"z shape {np.shape(z)} differs from x_t shape {np.shape(x_t)}")

    eps_hat = predict_noise(denoiser, x, t, task_id)
    beta = schedule.betas[t - 1]
    alpha_bar = schedule.alpha_bars[t - 1]
    mean = (x - beta / np.sqrt(1.0 - alpha_bar) * eps_hat) / np.sqrt(schedule.alphas[t - 1])
    if t > 1 and z is not None:
        mean = mean + schedule.sigmas[t - 1] * (z[None] if single else z)
    return mean[0] if single else mean


def sample_trajectories(denoiser: Denoiser, task_id: int, n: int, schedule: NoiseSchedule, seed: int) -> List[TrajTensor]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, denoiser.horizon, STEP_DIM))
    for t in range(schedule.T, 0, -1):
        z = rng.standard_normal(x.shape) if t > 1 else None
        x = denoise_step(denoiser, x, t, task_id, schedule, z)
    x = np.clip(x, -1.0, 1.0)
    return [TrajTensor(data=item, task_id=task_id) for item in x]


def generate_trajectories(denoiser: Denoiser, task_id: int, n: int, schedule: NoiseSchedule, seed: int) -> List[Trajectory]:
    """Samples mapped back to environment units."""
    return [denormalize(item, denoiser.scales) for item in sample_trajectories(denoiser, task_id, n, schedule, seed)]


# ============ Training ============

def noise_loss(net: TensorNet, inputs: np.ndarray, eps: np.ndarray):
    return ad.mean(ad.absolute(net(inputs) - eps))


def train_step(
    denoiser: Denoiser,
    batch: Sequence[TrajTensor],
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> Tuple[Denoiser, float]:
    if len(batch) == 0:
        raise ValueError("train_step needs a non-empty batch")
    x0 = np.stack([item.data for item in batch])
    task_ids = np.array([item.task_id for item in batch])
    B = x0.shape[0]
    t = rng.integers(1, schedule.T + 1, size=B)
    eps = rng.standard_normal(x0.shape)
    inputs = denoiser_inputs(denoiser, q_sample(x0, t, eps, schedule), t, task_ids)

    loss, grads = value_and_gradients(denoiser.net, lambda net, b: noise_loss(net, b, eps.reshape(B, -1)), inputs)
    net, optimizer = adam_step(denoiser.net, grads, denoiser.optimizer)
    return replace(denoiser, net=net, optimizer=optimizer), loss


def continual_fit(
    denoiser: Denoiser,
    real_set: "SkilledSet",
    replayed_sets: Sequence["SkilledSet"],
    epochs: int,
    seed: int,
    schedule: NoiseSchedule,
    batch_size: int = 32,
) -> Tuple[Denoiser, List[float]]:
    """Self-cloning fit on the union of the current task's real set and regenerated past-task sets.

    Returns the updated denoiser and the mean loss per epoch.
    """
    if not real_set.trajectories:
        raise ValueError(f"real set for task {real_set.task_id} is empty")
    data = [normalize(traj, denoiser.scales) for traj in real_set.trajectories]
    for replayed in replayed_sets:
        data.extend(normalize(traj, denoiser.scales) for traj in replayed.trajectories)

    rng = np.random.default_rng(seed)
    n = len(data)
    history: List[float] = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            batch = [data[i] for i in order[start:start + batch_size]]
            denoiser, loss = train_step(denoiser, batch, schedule, rng)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if (epoch + 1) % 50 == 0:
            logger.debug(f"[task {real_set.task_id}] denoiser epoch {epoch + 1}/{epochs} | loss {history[-1]:.4f}")

    if history:
        logger.info(
            f"[task {real_set.task_id}] denoiser fit on {n} trajectories ({len(replayed_sets)} replayed sets, "
            f"{batches_per_epoch(n, batch_size)} batches per epoch): loss {history[0]:.4f} -> {history[-1]:.4f}"
        )
    return denoiser, history


def batches_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)

"""Comparison learners run under the same harness: Finetune, EWC and a perfect-replay oracle."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from loguru import logger

from distr.autodiff.nets import NetParams, TensorNet, gradients
from distr.autodiff.tensor import Tensor
from distr.envs.tasksuite import TaskSpec, observation, reset, step
from distr.exceptions import ShapeError
from distr.learners.agent import DistrLearner
from distr.learners.base import BaseLearner, DistrState, SkilledSet
from distr.learners.sac import ActorRegularizer, GaussianPolicy, action_log_prob, sample_action
from distr.seeding import derive_seed, make_rng


# ============ EWC ============

@dataclass(frozen=True)
class EwcAnchor:
    task_id: int
    params: NetParams
    fisher: NetParams

    def __post_init__(self) -> None:
        if any(np.any(f < 0) for f in self.fisher.arrays()):
            raise ValueError(f"Fisher estimate for task {self.task_id} has negative entries")


def fisher_from_gradients(grads: Sequence[NetParams]) -> NetParams:
    """Diagonal Fisher: elementwise mean of squared per-sample gradients."""
    if not grads:
        raise ValueError("Fisher estimate needs at least one gradient sample")
    sums = [np.zeros_like(a) for a in grads[0].arrays()]
    for g in grads:
        for total, array in zip(sums, g.arrays()):
            total += np.square(array)
    return grads[0].with_arrays([total / len(grads) for total in sums])


def on_policy_states(policy: GaussianPolicy, task: TaskSpec, n_samples: int, seed: int) -> np.ndarray:
    """Observations visited by the stochastic policy, episode after episode until n_samples are collected."""
    rng = make_rng(seed, "fisher_rollout")
    collected: List[np.ndarray] = []
    episode = 0
    while len(collected) < n_samples:
        state = reset(task, derive_seed(seed, "fisher_reset", episode))
        for _ in range(task.horizon):
            obs = observation(task, state)
            collected.append(obs)
            action, _ = sample_action(policy, obs, "stochastic", rng)
            result = step(task, state, action)
            state = result.next_state
            if result.done or len(collected) == n_samples:
                break
        episode += 1
    return np.stack(collected)


def fisher_estimate(policy: GaussianPolicy, task: TaskSpec, n_samples: int, seed: int) -> NetParams:
    """Mean squared gradient of log pi(a|s) at actions sampled on on-policy states."""
    states = on_policy_states(policy, task, n_samples, seed)
    actions, _ = sample_action(policy, states, "stochastic", make_rng(seed, "fisher_actions"))
    per_sample = [
        gradients(policy.trunk, lambda net, b: action_log_prob(net, b[0], b[1], policy).sum(),
                  (states[i:i + 1], actions[i:i + 1]))
        for i in range(states.shape[0])
    ]
    return fisher_from_gradients(per_sample)


def _check_anchor(params: NetParams, anchor: EwcAnchor) -> None:
    for index, (p, a, f) in enumerate(zip(params.arrays(), anchor.params.arrays(), anchor.fisher.arrays())):
        if p.shape != a.shape or p.shape != f.shape:
            raise ShapeError(f"EWC anchor {anchor.task_id}, array {index}: {p.shape} vs {a.shape} / {f.shape}")


def ewc_penalty(params: NetParams, anchors: Sequence[EwcAnchor], lambda_ewc: float) -> float:
    """(lambda / 2) * sum over anchors and parameters of F * (theta - theta*)^2."""
    total = 0.0
    for anchor in anchors:
        _check_anchor(params, anchor)
        for p, a, f in zip(params.arrays(), anchor.params.arrays(), anchor.fisher.arrays()):
            total += float(np.sum(f * np.square(p - a)))
    return 0.5 * lambda_ewc * total


def ewc_penalty_tensor(net: TensorNet, anchors: Sequence[EwcAnchor], lambda_ewc: float) -> Tensor:
    total = None
    for anchor in anchors:
        _check_anchor(net.params, anchor)
        for leaf, a, f in zip(net.leaves, anchor.params.arrays(), anchor.fisher.arrays()):
            term = (f * (leaf - a).square()).sum()
            total = term if total is None else total + term
    return (0.5 * lambda_ewc) * total


def ewc_regularizer(anchors: Sequence[EwcAnchor], lambda_ewc: float) -> Optional[ActorRegularizer]:
    if not anchors or lambda_ewc == 0:
        return None
    anchors = list(anchors)
    return lambda net: ewc_penalty_tensor(net, anchors, lambda_ewc)


# ============ Learners ============

class FinetuneLearner(BaseLearner):
    """Plain SAC continued from the current parameters, task after task."""

    method = "finetune"

    def learn_task(self, state: DistrState, task: TaskSpec, seed: int, budget: Optional[int] = None) -> DistrState:
        self.check_order(state, task)
        self.specificity_probe(state, task, seed)
        state.general_policy, _ = self.train_immediate(state, task, seed, state.general_policy, budget)
        self.evaluate(state, task, seed)
        return state


class EwcLearner(BaseLearner):
    """SAC with a quadratic pull toward every earlier task's actor parameters."""

    method = "ewc"

    def learn_task(self, state: DistrState, task: TaskSpec, seed: int, budget: Optional[int] = None) -> DistrState:
        self.check_order(state, task)
        cfg = self.config.ewc
        self.specificity_probe(state, task, seed)
        regularizer = ewc_regularizer(state.ewc_anchors, cfg.lambda_ewc)
        state.general_policy, _ = self.train_immediate(state, task, seed, state.general_policy, budget, regularizer)

        with self.stage(state, "fisher", task.task_id):
            fisher = fisher_estimate(state.general_policy, task, cfg.fisher_samples,
                                     derive_seed(seed, "fisher", task.task_id))
            state.ewc_anchors.append(EwcAnchor(task.task_id, state.general_policy.trunk.copy(), fisher))
        logger.info(f"[task {task.task_id}] EWC anchor added; "
                    f"mean Fisher {np.mean([f.mean() for f in fisher.arrays()]):.3e}")

        self.evaluate(state, task, seed)
        return state


class PerfectReplayLearner(DistrLearner):
    """Oracle upper bound: replays every stored real skilled set and needs no denoiser."""

    method = "perfect_replay"

    def init_state(self, seed: int) -> DistrState:
        return BaseLearner.init_state(self, seed)

    def past_sets(self, state: DistrState, task: TaskSpec, seed: int) -> List[SkilledSet]:
        replayed = [state.real_archive[i] for i in sorted(state.real_archive) if i < task.task_id]
        state.replayed = replayed
        return replayed

    def memorise(self, state: DistrState, task: TaskSpec, real: SkilledSet, replayed: List[SkilledSet],
                 seed: int) -> None:
        state.real_archive[task.task_id] = real

import numpy as np
import pytest

from distr.autodiff.nets import TensorNet
from distr.envs.tasksuite import make_task
from distr.exceptions import ShapeError
from distr.learners.baselines import (
    EwcAnchor,
    EwcLearner,
    FinetuneLearner,
    PerfectReplayLearner,
    ewc_penalty,
    ewc_penalty_tensor,
    ewc_regularizer,
    fisher_estimate,
    fisher_from_gradients,
    on_policy_states,
)
from distr.learners.sac import make_policy


# ============ Fixtures ============

@pytest.fixture
def task(tiny_config):
    return make_task(0, tiny_config.suite)


@pytest.fixture
def policy(tiny_config, task):
    return make_policy(task.obs_dim, tiny_config.sac, seed=0)


@pytest.fixture
def unit_anchor(policy):
    """Anchor at the current parameters with an all-ones Fisher."""
    trunk = policy.trunk
    return EwcAnchor(0, trunk.copy(), trunk.with_arrays([np.ones_like(a) for a in trunk.arrays()]))


def shifted(params, delta):
    return params.with_arrays([a + delta for a in params.arrays()])


def run_sequence(learner, seed=0):
    state = learner.init_state(seed)
    learner.evaluate_pre_row(state, seed)
    for task in learner.tasks:
        learner.learn_task(state, task, seed)
    return state


def anchored_drift(tiny_config, lambda_ewc):
    """Max |theta - theta*| over the actor entries the task-0 Fisher constrains, after learning task 1."""
    config = tiny_config.model_copy(update={
        "method": "ewc",
        "ewc": tiny_config.ewc.model_copy(update={"lambda_ewc": lambda_ewc}),
        "sac": tiny_config.sac.model_copy(update={"lr": 1e-4}),
    })
    state = run_sequence(EwcLearner(config))
    anchor = state.ewc_anchors[0]
    drift, constrained = 0.0, 0
    for theta, star, fisher in zip(state.general_policy.trunk.arrays(), anchor.params.arrays(),
                                   anchor.fisher.arrays()):
        # entries with no task-0 Fisher mass (e.g. weights of the task-1 one-hot input) are free
        mask = fisher >= 1e-2
        constrained += int(mask.sum())
        if mask.any():
            drift = max(drift, float(np.max(np.abs(theta - star)[mask])))
    assert constrained > 0
    return drift


class TestEwc:
    # ===== Fisher =====

    def test_fisher_is_mean_squared_gradient(self, policy):
        trunk = policy.trunk
        g1 = trunk.with_arrays([np.full_like(a, 1.0) for a in trunk.arrays()])
        g2 = trunk.with_arrays([np.full_like(a, -3.0) for a in trunk.arrays()])

        fisher = fisher_from_gradients([g1, g2])

        assert all(np.all(f == 5.0) for f in fisher.arrays())

    def test_fisher_needs_samples(self):
        with pytest.raises(ValueError):
            fisher_from_gradients([])

    def test_on_policy_state_count(self, policy, task):
        states = on_policy_states(policy, task, 21, seed=0)
        assert states.shape == (21, task.obs_dim)

    def test_fisher_estimate(self, policy, task):
        fisher = fisher_estimate(policy, task, 12, seed=0)

        assert [f.shape for f in fisher.arrays()] == [a.shape for a in policy.trunk.arrays()]
        assert all(np.all(f >= 0.0) for f in fisher.arrays())
        assert max(float(f.max()) for f in fisher.arrays()) > 0.0

    def test_negative_fisher_rejected(self, policy):
        trunk = policy.trunk
        with pytest.raises(ValueError):
            EwcAnchor(0, trunk, trunk.with_arrays([-np.ones_like(a) for a in trunk.arrays()]))

    # ===== Penalty =====

    def test_no_penalty_at_anchor(self, policy, unit_anchor):
        net = TensorNet(policy.trunk)

        ewc_penalty_tensor(net, [unit_anchor], 100.0).backward()

        assert ewc_penalty(policy.trunk, [unit_anchor], 100.0) == 0.0
        assert all(np.all(grad == 0.0) for grad in net.grads().arrays())

    def test_penalty_value(self, policy, unit_anchor):
        n_params = sum(a.size for a in policy.trunk.arrays())

        penalty = ewc_penalty(shifted(policy.trunk, 0.5), [unit_anchor], 4.0)

        assert penalty == pytest.approx(0.5 * 4.0 * 0.25 * n_params)

    def test_penalties_sum_over_anchors(self, policy, unit_anchor):
        moved = shifted(policy.trunk, 1.0)
        single = ewc_penalty(moved, [unit_anchor], 1.0)
        assert ewc_penalty(moved, [unit_anchor, unit_anchor], 1.0) == pytest.approx(2.0 * single)

    def test_tensor_penalty_matches(self, policy, unit_anchor):
        moved = shifted(policy.trunk, 0.3)

        value = ewc_penalty_tensor(TensorNet(moved), [unit_anchor], 2.0)

        assert value.item() == pytest.approx(ewc_penalty(moved, [unit_anchor], 2.0))

    def test_penalty_gradient_pulls_back(self, policy, unit_anchor):
        moved = shifted(policy.trunk, 0.3)
        net = TensorNet(moved)

        ewc_penalty_tensor(net, [unit_anchor], 2.0).backward()

        # d/dθ of (λ/2) F (θ - θ*)^2 = λ F (θ - θ*)
        for grad in net.grads().arrays():
            np.testing.assert_allclose(grad, 2.0 * 0.3)

    def test_anchor_shape_mismatch(self, tiny_config, task, unit_anchor):
        other = make_policy(task.obs_dim, tiny_config.sac.model_copy(update={"hidden_sizes": [8]}), seed=0)
        with pytest.raises(ShapeError):
            ewc_penalty(other.trunk, [unit_anchor], 1.0)

    def test_regularizer_disabled(self, unit_anchor):
        assert ewc_regularizer([], 10.0) is None
        assert ewc_regularizer([unit_anchor], 0.0) is None
        assert ewc_regularizer([unit_anchor], 1.0) is not None


class TestBaselineLearners:
    def test_finetune(self, tiny_config):
        state = run_sequence(FinetuneLearner(tiny_config.model_copy(update={"method": "finetune"})))

        assert state.tasks_completed == 2
        assert state.denoiser is None and state.priority_records == []
        assert [r.stage for r in state.stage_log if r.task_id == 1] == [
            "specificity_probe", "train_immediate", "evaluate",
        ]

    def test_ewc_keeps_one_anchor_per_task(self, tiny_config):
        state = run_sequence(EwcLearner(tiny_config.model_copy(update={"method": "ewc"})))

        assert [a.task_id for a in state.ewc_anchors] == [0, 1]
        assert "fisher" in [r.stage for r in state.stage_log]

    def test_perfect_replay_uses_real_archive(self, tiny_config):
        state = run_sequence(PerfectReplayLearner(tiny_config.model_copy(update={"method": "perfect_replay"})))

        assert state.denoiser is None
        assert sorted(state.real_archive) == [0, 1]
        assert [(s.task_id, s.source) for s in state.replayed] == [(0, "real")]
        assert state.replayed[0] is state.real_archive[0]
        assert "fit_denoiser" not in [r.stage for r in state.stage_log]

    # ===== Stability dial =====

    def test_strong_anchor_freezes_the_actor(self, tiny_config):
        assert anchored_drift(tiny_config, 1e6) < 1e-3

    def test_anchor_strength_is_a_dial(self, tiny_config):
        assert anchored_drift(tiny_config, 1e6) < anchored_drift(tiny_config, 0.0)

import numpy as np
import pandas as pd
import pytest

from distr.autodiff.nets import TensorNet
from distr.envs.tasksuite import make_task, observations
from distr.learners.sac import (
    Batch,
    GaussianPolicy,
    PerturbedPolicy,
    ReplayBuffer,
    action_log_prob,
    critic_targets,
    export_episode_log,
    make_policy,
    make_sac_state,
    sac_update,
    sample_action,
    train_immediate,
)


# ============ Fixtures ============

@pytest.fixture
def task(tiny_config):
    return make_task(1, tiny_config.suite)


@pytest.fixture
def policy(tiny_config, task):
    return make_policy(task.obs_dim, tiny_config.sac, seed=0)


@pytest.fixture
def zero_policy(policy):
    """Trunk with all-zero parameters: mean 0 and log_std 0 everywhere."""
    return policy.with_trunk(policy.trunk.zeros_like())


def random_batch(obs_dim: int, size: int, seed: int = 0, done: float = 0.0) -> Batch:
    rng = np.random.default_rng(seed)
    return Batch(
        obs=rng.normal(size=(size, obs_dim)),
        actions=rng.uniform(-0.9, 0.9, size=(size, 2)),
        rewards=rng.normal(size=size),
        next_obs=rng.normal(size=(size, obs_dim)),
        dones=np.full(size, done),
    )


def filled_state(policy, sac_config, n: int = 32):
    state = make_sac_state(policy, sac_config, gamma=0.99, seed=0)
    batch = random_batch(policy.obs_dim, n)
    for row in zip(*batch):
        state.buffer.add(*row)
    return state


class TestPolicy:
    # ===== Sampling =====

    def test_zero_mean_deterministic_action(self, zero_policy, task):
        obs = observations(np.zeros((1, 4)), task.task_id, task.num_tasks)[0]

        action, log_prob = sample_action(zero_policy, obs, "deterministic", None)

        np.testing.assert_array_equal(action, [0.0, 0.0])
        # two dims of -1/2 ln(2 pi) - ln(1 + 1e-6)
        assert log_prob == pytest.approx(2 * -0.918939, abs=1e-5)

    def test_vanishing_std_collapses_to_mean(self, policy, task):
        narrow = GaussianPolicy(policy.trunk, log_std_min=-30.0, log_std_max=-20.0)
        obs = observations(np.random.default_rng(0).normal(size=(5, 4)), task.task_id, task.num_tasks)

        stochastic, _ = sample_action(narrow, obs, "stochastic", np.random.default_rng(1))
        deterministic, _ = sample_action(narrow, obs, "deterministic", None)

        np.testing.assert_allclose(stochastic, deterministic, atol=1e-6)

    def test_actions_are_squashed(self, policy, task):
        obs = observations(np.random.default_rng(0).normal(scale=10.0, size=(50, 4)), task.task_id, task.num_tasks)

        action, log_prob = sample_action(policy, obs, "stochastic", np.random.default_rng(0))

        assert action.shape == (50, 2) and log_prob.shape == (50,)
        assert np.all(np.abs(action) <= 1.0)

    def test_unknown_mode(self, policy, task):
        with pytest.raises(ValueError):
            sample_action(policy, np.zeros(task.obs_dim), "greedy", None)

    def test_log_prob_of_given_actions_matches_sampler(self, policy, task):
        obs = observations(np.random.default_rng(2).normal(size=(8, 4)), task.task_id, task.num_tasks)
        actions, expected = sample_action(policy, obs, "stochastic", np.random.default_rng(3))

        log_prob = action_log_prob(TensorNet(policy.trunk, requires_grad=False), obs, actions, policy)

        np.testing.assert_allclose(log_prob.value, expected, rtol=1e-6, atol=1e-8)

    def test_log_std_is_clamped(self, policy):
        arrays = [np.zeros_like(a) for a in policy.trunk.arrays()]
        arrays[-1] = np.array([0.0, 0.0, 50.0, -50.0])
        wide = policy.with_trunk(policy.trunk.with_arrays(arrays))

        _, log_std = wide.mean_log_std(np.zeros((1, policy.obs_dim)))

        np.testing.assert_array_equal(log_std, [[2.0, -5.0]])

    def test_zero_noise_perturbation_is_deterministic(self, policy, task):
        obs = observations(np.ones((1, 4)), task.task_id, task.num_tasks)[0]
        expected, _ = sample_action(policy, obs, "deterministic", None)

        action = PerturbedPolicy(policy, 0.0).act(obs, np.random.default_rng(0), True)

        np.testing.assert_allclose(action, expected)


class TestReplayBuffer:
    def test_capacity_is_respected(self):
        buffer = ReplayBuffer(capacity=3, obs_dim=2, action_dim=2)

        for i in range(5):
            buffer.add(np.full(2, i), np.zeros(2), float(i), np.zeros(2), 0.0)

        assert len(buffer) == 3
        assert sorted(buffer.rewards.tolist()) == [2.0, 3.0, 4.0]

    def test_empty_buffer_cannot_sample(self):
        with pytest.raises(ValueError):
            ReplayBuffer(4, 2, 2).sample(2, np.random.default_rng(0))


class TestSacUpdate:
    # ===== Targets =====

    def test_terminal_target_is_reward(self, policy, tiny_config):
        state = make_sac_state(policy, tiny_config.sac, gamma=0.99, seed=0)
        batch = random_batch(policy.obs_dim, 6, done=1.0)

        targets = critic_targets(state, batch, np.random.default_rng(0))

        np.testing.assert_array_equal(targets[:, 0], batch.rewards)

    def test_default_target_entropy(self, policy, tiny_config):
        assert make_sac_state(policy, tiny_config.sac, 0.99, 0).target_entropy == -2.0

    # ===== Updates =====

    def test_full_polyak_copies_critics(self, policy, tiny_config):
        state = filled_state(policy, tiny_config.sac.model_copy(update={"tau": 1.0}))

        new_state, _ = sac_update(state, state.buffer.sample(8, np.random.default_rng(0)), np.random.default_rng(1))

        assert new_state.q1_target.max_abs_diff(new_state.q1) == 0.0
        assert new_state.q2_target.max_abs_diff(new_state.q2) == 0.0

    def test_targets_move_by_polyak_only(self, policy, tiny_config):
        state = filled_state(policy, tiny_config.sac)
        tau = tiny_config.sac.tau

        new_state, _ = sac_update(state, state.buffer.sample(8, np.random.default_rng(0)), np.random.default_rng(1))

        for old, new, online in zip(state.q1_target.arrays(), new_state.q1_target.arrays(), new_state.q1.arrays()):
            np.testing.assert_allclose(new, (1.0 - tau) * old + tau * online)

    def test_update_changes_every_network(self, policy, tiny_config):
        state = filled_state(policy, tiny_config.sac)

        new_state, losses = sac_update(state, state.buffer.sample(8, np.random.default_rng(0)),
                                       np.random.default_rng(1))

        assert new_state.policy.trunk.max_abs_diff(state.policy.trunk) > 0.0
        assert new_state.q1.max_abs_diff(state.q1) > 0.0
        assert new_state.alpha != state.alpha and new_state.alpha > 0.0
        assert np.isfinite([losses.critic1, losses.critic2, losses.actor, losses.alpha_loss]).all()

    def test_regularizer_changes_actor_step(self, policy, tiny_config):
        state = filled_state(policy, tiny_config.sac)
        batch = state.buffer.sample(8, np.random.default_rng(0))

        plain, _ = sac_update(state, batch, np.random.default_rng(1))
        pulled, _ = sac_update(state, batch, np.random.default_rng(1),
                               actor_regularizer=lambda net: (net(np.ones((1, policy.obs_dim))) * 100.0).sum())

        assert plain.policy.trunk.max_abs_diff(pulled.policy.trunk) > 0.0
        assert plain.q1.max_abs_diff(pulled.q1) == 0.0

    def test_empty_buffer(self, policy, tiny_config):
        state = make_sac_state(policy, tiny_config.sac, gamma=0.99, seed=0)
        with pytest.raises(ValueError):
            sac_update(state, random_batch(policy.obs_dim, 4), np.random.default_rng(0))


class TestTrainImmediate:
    def test_budget_below_warmup_leaves_policy_untouched(self, task, policy, tiny_config):
        trained, log = train_immediate(task, policy, 10, seed=0, config=tiny_config.sac, gamma=0.99)

        assert trained.trunk.max_abs_diff(policy.trunk) == 0.0
        assert len(log) >= 1

    def test_seeded_runs_are_identical(self, task, policy, tiny_config):
        a, log_a = train_immediate(task, policy, 40, seed=5, config=tiny_config.sac, gamma=0.99)
        b, log_b = train_immediate(task, policy, 40, seed=5, config=tiny_config.sac, gamma=0.99)

        assert a.trunk.max_abs_diff(b.trunk) == 0.0
        assert [e.episode_return for e in log_a] == [e.episode_return for e in log_b]
        for x, y in zip(log_a, log_b):
            np.testing.assert_array_equal(x.trajectory.states, y.trajectory.states)

    def test_episodes_cover_budget(self, task, policy, tiny_config):
        _, log = train_immediate(task, policy, 40, seed=1, config=tiny_config.sac, gamma=0.99)

        assert [e.episode for e in log] == list(range(len(log)))
        assert sum(e.steps for e in log) <= 40
        assert all(1 <= e.steps <= task.horizon for e in log)

    def test_episode_log_export(self, task, policy, tiny_config, tmp_path):
        _, log = train_immediate(task, policy, 16, seed=1, config=tiny_config.sac, gamma=0.99)

        frame = pd.read_csv(export_episode_log(tmp_path / "episodes.csv", log))

        assert list(frame.columns) == ["episode", "steps", "return", "success"]
        assert len(frame) == len(log)

    @pytest.mark.slow
    def test_success_improves_over_the_budget(self, tiny_config):
        suite = tiny_config.suite.model_copy(update={"horizon": 32})
        config = tiny_config.sac.model_copy(update={
            "hidden_sizes": [64, 64], "batch_size": 64, "lr": 1e-3, "buffer_capacity": 20_000, "warmup_steps": 1000,
        })
        task = make_task(0, suite)
        policy = make_policy(task.obs_dim, config, seed=0)

        _, log = train_immediate(task, policy, 8000, seed=0, config=config, gamma=0.99)

        early, late = log[:20], log[-20:]
        assert np.mean([e.success for e in late]) > np.mean([e.success for e in early])
        assert np.mean([e.episode_return for e in late]) > np.mean([e.episode_return for e in early])

import numpy as np
import pytest
from pydantic import ValidationError

from distr.envs.tasksuite import make_task, success_rate
from distr.learners.priority import (
    make_record,
    priorities,
    sample_replay_tasks,
    specificity_probe,
    vulnerability,
)
from distr.learners.sac import make_policy
from distr.serialisation import TaskPriorityRecord


# ============ Fixtures ============

@pytest.fixture
def task(tiny_config):
    return make_task(0, tiny_config.suite)


@pytest.fixture
def policy(tiny_config, task):
    return make_policy(task.obs_dim, tiny_config.sac, seed=1)


def record(task_id: int, s_v: float, s_s: float) -> TaskPriorityRecord:
    return make_record(task_id, s_k=s_v, s_hat=0.0, s_v=s_v, s_s=s_s)


class TestRecords:
    def test_priority_formula(self):
        assert record(0, s_v=0.4, s_s=0.2).priority == pytest.approx(0.6)

    def test_vulnerable_unfamiliar_task_gets_full_priority(self):
        assert record(0, s_v=1.0, s_s=0.0).priority == 1.0

    def test_inconsistent_priority_is_rejected(self):
        with pytest.raises(ValidationError):
            TaskPriorityRecord(task_id=0, s_k=1.0, s_hat_k=0.5, s_v=0.5, s_s=0.0, priority=0.1)


class TestPriorities:
    # ===== Probabilities =====

    def test_proportional(self):
        probs = priorities([record(0, 0.4, 0.2), record(1, 0.0, 0.6)])
        np.testing.assert_allclose(probs, [0.6 / 0.8, 0.2 / 0.8])

    def test_uniform_mode(self):
        probs = priorities([record(0, 1.0, 0.0), record(1, 0.0, 1.0), record(2, 0.5, 0.5)], mode="uniform")
        np.testing.assert_allclose(probs, [1 / 3, 1 / 3, 1 / 3])

    def test_all_zero_falls_back_to_uniform(self):
        probs = priorities([record(0, 0.0, 1.0), record(1, 0.0, 1.0)])
        np.testing.assert_allclose(probs, [0.5, 0.5])

    def test_needs_records(self):
        with pytest.raises(ValueError):
            priorities([])

    # ===== Sampling =====

    def test_budget_covers_everything(self):
        assert sample_replay_tasks(np.array([0.2, 0.8]), 3, np.random.default_rng(0)) == [0, 1]

    def test_zero_budget(self):
        assert sample_replay_tasks(np.array([0.2, 0.8]), 0, np.random.default_rng(0)) == []

    def test_negative_budget(self):
        with pytest.raises(ValueError):
            sample_replay_tasks(np.array([1.0]), -1, np.random.default_rng(0))

    def test_distinct_and_sorted(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            picks = sample_replay_tasks(np.array([0.1, 0.4, 0.2, 0.3]), 2, rng)
            assert len(set(picks)) == 2 and picks == sorted(picks)

    def test_zero_probability_never_drawn(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert sample_replay_tasks(np.array([0.0, 0.5, 0.0, 0.5]), 2, rng) == [1, 3]

    def test_single_draw_frequencies(self):
        rng = np.random.default_rng(7)

        counts = np.bincount([sample_replay_tasks(np.array([0.7, 0.2, 0.1]), 1, rng)[0] for _ in range(3000)],
                             minlength=3)

        np.testing.assert_allclose(counts / 3000, [0.7, 0.2, 0.1], atol=0.04)


class TestVulnerability:
    def test_no_noise_means_no_vulnerability(self, policy, task):
        s_k, s_hat, s_v = vulnerability(policy, task, 0.0, n_eval=3, n_repeats=2, seed=0)

        assert s_hat == s_k
        assert s_v == 0.0

    def test_rates_in_unit_interval(self, policy, task):
        s_k, s_hat, s_v = vulnerability(policy, task, 0.5, n_eval=3, n_repeats=2, seed=0)

        assert 0.0 <= s_hat <= 1.0 and 0.0 <= s_k <= 1.0
        assert s_v == max(0.0, s_k - s_hat)

    def test_seeded(self, policy, task):
        assert (vulnerability(policy, task, 0.5, 3, 2, seed=11)
                == vulnerability(policy, task, 0.5, 3, 2, seed=11))

    def test_invalid_arguments(self, policy, task):
        with pytest.raises(ValueError):
            vulnerability(policy, task, -0.1, 3, 1, seed=0)
        with pytest.raises(ValueError):
            vulnerability(policy, task, 0.1, 3, 0, seed=0)

    def test_probe_is_plain_success_rate(self, policy, task):
        assert specificity_probe(policy, task, 4, seed=2) == success_rate(task, policy, 4, seed=2)

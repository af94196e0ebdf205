import numpy as np
import pytest

from distr.evaluation.metrics import (
    SuccessMatrix,
    average_performance,
    export_success_matrix,
    forgetting,
    forgetting_per_task,
    forward_transfer,
    forward_transfer_per_task,
    load_success_matrix,
    median_bandwidth,
    mmd,
)
from distr.exceptions import IncompleteDataError


# ============ Fixtures ============

def full_matrix(values: np.ndarray, pre_row: np.ndarray) -> SuccessMatrix:
    matrix = SuccessMatrix(len(pre_row))
    for j, v in enumerate(pre_row):
        matrix.set_pre(j, v)
    for row in values:
        matrix.append_row(list(row))
    return matrix


@pytest.fixture
def three_task_matrix():
    return full_matrix(
        np.array([[0.9, 0.1, 0.0], [0.6, 0.8, 0.2], [0.9, 0.5, 0.1]]),
        np.array([0.0, 0.0, 0.0]),
    )


class TestSuccessMatrix:
    # ===== Recording =====

    def test_rows_accumulate(self, three_task_matrix):
        assert three_task_matrix.trained == 3
        assert three_task_matrix.get(1, 0) == 0.6
        assert three_task_matrix.get(-1, 2) == 0.0
        assert three_task_matrix.as_array().shape == (4, 3)

    def test_lower_triangle_is_required(self):
        matrix = SuccessMatrix(3)
        matrix.append_row([0.5, None, None])

        with pytest.raises(IncompleteDataError):
            matrix.append_row([0.5, None, 0.3])

    def test_rates_are_bounded(self):
        with pytest.raises(ValueError):
            SuccessMatrix(2).append_row([1.5, 0.0])

    def test_row_width(self):
        with pytest.raises(ValueError):
            SuccessMatrix(2).append_row([0.5])

    def test_probe_fills_only_open_entries(self):
        matrix = SuccessMatrix(3)
        matrix.set_pre(0, 0.25)
        matrix.record_probe(0, 0.75)
        matrix.append_row([0.5, None, None])

        matrix.record_probe(1, 0.4)

        assert matrix.get(-1, 0) == 0.25
        assert matrix.get(0, 1) == 0.4

    # ===== Persistence =====

    def test_csv_layout(self, three_task_matrix, tmp_path):
        path = export_success_matrix(tmp_path / "success_matrix.csv", three_task_matrix)

        header = path.read_text().splitlines()[0]
        loaded = load_success_matrix(path)

        assert header == "after_task,task_0,task_1,task_2"
        np.testing.assert_allclose(loaded.as_array(), three_task_matrix.as_array(), rtol=1e-15)

    def test_partial_rows_survive_export(self, tmp_path):
        matrix = SuccessMatrix(2)
        matrix.append_row([0.5, None])

        loaded = load_success_matrix(export_success_matrix(tmp_path / "m.csv", matrix))

        assert loaded.trained == 1
        assert np.isnan(loaded.get(0, 1)) and np.isnan(loaded.get(-1, 0))


class TestMetrics:
    # ===== Average performance =====

    def test_average_performance(self, three_task_matrix):
        assert average_performance(three_task_matrix) == pytest.approx(0.5)

    def test_average_needs_complete_final_row(self):
        matrix = SuccessMatrix(2)
        matrix.append_row([1.0, None])
        with pytest.raises(IncompleteDataError):
            average_performance(matrix)

    def test_average_invariant_to_task_relabelling(self, three_task_matrix):
        final = three_task_matrix.final_row()
        permuted = full_matrix(np.tile(final[[2, 0, 1]], (3, 1)), np.zeros(3))
        assert average_performance(permuted) == pytest.approx(average_performance(three_task_matrix))

    # ===== Forward transfer =====

    def test_forward_transfer_example(self):
        matrix = full_matrix(np.array([[1.0]]), np.array([0.0]))
        assert forward_transfer(matrix, [0.5]) == pytest.approx(1.0 / 3.0)

    def test_forward_transfer_all_zero(self):
        matrix = full_matrix(np.array([[0.0]]), np.array([0.0]))
        assert forward_transfer(matrix, [0.0]) == 0.0

    def test_forward_transfer_uses_previous_row(self, three_task_matrix):
        per_task = forward_transfer_per_task(three_task_matrix, [1.0, 1.0, 1.0])
        # S_i = (s_i(i) + s_{i-1}(i)) / 2, S_ref = 0.5
        np.testing.assert_allclose(per_task, [(0.45 - 0.5) / 0.5, (0.45 - 0.5) / 0.5, (0.15 - 0.5) / 0.5])

    def test_forward_transfer_needs_references(self, three_task_matrix):
        with pytest.raises(IncompleteDataError):
            forward_transfer(three_task_matrix, [0.5])

    # ===== Forgetting =====

    def test_forgetting(self, three_task_matrix):
        np.testing.assert_allclose(forgetting_per_task(three_task_matrix), [0.0, 0.3, 0.0])
        assert forgetting(three_task_matrix) == pytest.approx(0.1)

    def test_backward_transfer_is_negative_forgetting(self):
        matrix = full_matrix(np.array([[0.2, 0.0], [0.6, 0.7]]), np.zeros(2))
        assert forgetting_per_task(matrix) == pytest.approx([-0.4, 0.0])

    # ===== Brute force =====

    def test_metrics_match_direct_formulas(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            K = int(rng.integers(1, 6))
            rows, pre, refs = rng.uniform(size=(K, K)), rng.uniform(size=K), rng.uniform(size=K)
            matrix = full_matrix(rows, pre)

            ft = []
            for i in range(K):
                before = pre[i] if i == 0 else rows[i - 1][i]
                ft.append(((rows[i][i] + before) / 2 - refs[i] / 2) / (1 - refs[i] / 2))

            assert average_performance(matrix) == pytest.approx(rows[-1].mean(), abs=1e-12)
            assert forward_transfer(matrix, refs) == pytest.approx(np.mean(ft), abs=1e-12)
            assert forgetting(matrix) == pytest.approx(np.mean(np.diag(rows) - rows[-1]), abs=1e-12)


class TestMmd:
    def test_identical_samples(self):
        a = np.random.default_rng(0).normal(size=(30, 3))
        mmd2, _ = mmd(a, a.copy())
        assert mmd2 == pytest.approx(0.0, abs=1e-9)

    def test_separated_point_masses(self):
        a, b = np.zeros((5, 2)), np.full((5, 2), 10.0)

        mmd2, bandwidth = mmd(a, b, bandwidth=1.0)

        assert bandwidth == 1.0
        assert mmd2 == pytest.approx(2.0 * (1.0 - np.exp(-200.0 / 2.0)), abs=1e-9)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(20, 2)), rng.normal(0.5, 1.0, size=(25, 2))
        assert mmd(a, b)[0] == pytest.approx(mmd(b, a)[0], abs=1e-12)

    def test_shrinks_as_means_approach(self):
        rng = np.random.default_rng(2)
        a, z = rng.normal(size=(200, 2)), rng.normal(size=(200, 2))

        values = [mmd(a, z + shift, bandwidth=1.0)[0] for shift in (3.0, 1.0, 0.2)]

        assert values[0] > values[1] > values[2] >= 0.0

    def test_median_bandwidth(self):
        pooled = np.array([[0.0], [1.0], [3.0]])
        assert median_bandwidth(pooled) == 2.0
        assert median_bandwidth(np.zeros((3, 2))) == 1.0

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            mmd(np.zeros((1, 2)), np.zeros((4, 2)))

    def test_widths_must_agree(self):
        with pytest.raises(ValueError):
            mmd(np.zeros((3, 2)), np.zeros((3, 3)))

"""Success-matrix bookkeeping, continual-learning metrics and the MMD coverage statistic."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from commons.io import atomic_write_csv
from loguru import logger
from scipy.spatial.distance import cdist

from distr.exceptions import IncompleteDataError

PRE_ROW = -1


@dataclass
class SuccessMatrix:
    """s[i][j]: success on task j after training task i, plus a pre-training row.

    Unrecorded entries are NaN. `rows` holds one array per trained task.
    """
    num_tasks: int
    pre_row: Optional[np.ndarray] = None
    rows: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.pre_row is None:
            self.pre_row = np.full(self.num_tasks, np.nan)

    @property
    def trained(self) -> int:
        return len(self.rows)

    def set_pre(self, task_id: int, value: float) -> None:
        self.pre_row[task_id] = _check_rate(value)

    def append_row(self, values: Sequence[Optional[float]]) -> None:
        if len(values) != self.num_tasks:
            raise ValueError(f"row must have {self.num_tasks} entries, got {len(values)}")
        row = np.array([np.nan if v is None else _check_rate(v) for v in values], dtype=np.float64)
        i = self.trained
        missing = [j for j in range(i + 1) if np.isnan(row[j])]
        if missing:
            raise IncompleteDataError(f"row {i} lacks entries for tasks {missing}")
        self.rows.append(row)

    def record_probe(self, task_id: int, value: float) -> None:
        """A probe of task k before training it is s_{k-1}(k); fill that entry if the row left it open."""
        row = self.pre_row if task_id == 0 else self.rows[task_id - 1]
        if np.isnan(row[task_id]):
            row[task_id] = _check_rate(value)

    def get(self, i: int, j: int) -> float:
        return float(self.pre_row[j] if i == PRE_ROW else self.rows[i][j])

    def final_row(self) -> np.ndarray:
        if not self.rows:
            raise IncompleteDataError("no task has been trained yet")
        return self.rows[-1]

    def as_array(self) -> np.ndarray:
        """(trained + 1, K) with the pre-row first."""
        return np.vstack([self.pre_row] + self.rows)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.as_array(), columns=[f"task_{j}" for j in range(self.num_tasks)])
        frame.insert(0, "after_task", np.arange(PRE_ROW, self.trained, dtype=np.int64))
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "SuccessMatrix":
        values = frame.drop(columns=["after_task"]).to_numpy(dtype=np.float64)
        matrix = cls(num_tasks=values.shape[1], pre_row=values[0].copy())
        matrix.rows = [row.copy() for row in values[1:]]
        return matrix


def _check_rate(value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"success rate {value} outside [0, 1]")
    return value


def export_success_matrix(path: Path, matrix: SuccessMatrix, float_format: str = "%.17g") -> Path:
    return atomic_write_csv(Path(path), matrix.to_frame(), float_format=float_format)


def load_success_matrix(path: Path) -> SuccessMatrix:
    return SuccessMatrix.from_frame(pd.read_csv(path))


# ============ Continual-learning metrics ============

def _complete_final_row(matrix: SuccessMatrix) -> np.ndarray:
    final = matrix.final_row()
    if np.any(np.isnan(final)):
        raise IncompleteDataError(f"final row incomplete: {final.tolist()}")
    return final


def average_performance(matrix: SuccessMatrix) -> float:
    return float(np.mean(_complete_final_row(matrix)))


def forward_transfer_per_task(matrix: SuccessMatrix, refs: Sequence[float]) -> List[Optional[float]]:
    """FT_i = (S_i - S_ref_i) / (1 - S_ref_i), S_i = (s_i(i) + s_{i-1}(i)) / 2, S_ref_i = s_ref(i) / 2.

    Entries whose denominator vanishes are None.
    """
    if len(refs) < matrix.trained:
        raise IncompleteDataError(f"{len(refs)} reference scores for {matrix.trained} trained tasks")
    out: List[Optional[float]] = []
    for i in range(matrix.trained):
        current, before = matrix.get(i, i), matrix.get(i - 1, i)
        if np.isnan(current) or np.isnan(before):
            raise IncompleteDataError(f"forward transfer needs s_{i}({i}) and s_{i - 1}({i})")
        s_i = (current + before) / 2.0
        s_ref = refs[i] / 2.0
        if s_ref == 1.0:
            logger.warning(f"Forward transfer undefined on task {i} (reference score 1 after halving); excluded")
            out.append(None)
            continue
        out.append((s_i - s_ref) / (1.0 - s_ref))
    return out


def forward_transfer(matrix: SuccessMatrix, refs: Sequence[float]) -> Optional[float]:
    values = [v for v in forward_transfer_per_task(matrix, refs) if v is not None]
    return float(np.mean(values)) if values else None


def forgetting_per_task(matrix: SuccessMatrix) -> List[float]:
    final = _complete_final_row(matrix)
    out = []
    for i in range(matrix.trained):
        diagonal = matrix.get(i, i)
        if np.isnan(diagonal):
            raise IncompleteDataError(f"diagonal entry s_{i}({i}) missing")
        out.append(diagonal - float(final[i]))
    return out


def forgetting(matrix: SuccessMatrix) -> float:
    return float(np.mean(forgetting_per_task(matrix)))


# ============ Coverage ============

def median_bandwidth(pooled: np.ndarray) -> float:
    distances = cdist(pooled, pooled)
    upper = distances[np.triu_indices(pooled.shape[0], k=1)]
    median = float(np.median(upper)) if upper.size else 0.0
    return median if median > 0.0 else 1.0


def mmd(sample_a: np.ndarray, sample_b: np.ndarray, bandwidth: Optional[float] = None) -> Tuple[float, float]:
    """Unbiased squared MMD with a Gaussian kernel; returns (mmd2, bandwidth).

    Equal-size samples also drop the paired cross terms k(a_i, b_i), so that a
    sample compared with itself scores exactly zero. The estimate is floored at 0.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"samples must be 2-D with equal width, got {a.shape} and {b.shape}")
    m, n = a.shape[0], b.shape[0]
    if m < 2 or n < 2:
        raise ValueError("unbiased MMD needs at least two points per sample")

    if bandwidth is None:
        bandwidth = median_bandwidth(np.vstack([a, b]))
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    gamma = 1.0 / (2.0 * bandwidth * bandwidth)

    k_aa = np.exp(-gamma * cdist(a, a, "sqeuclidean"))
    k_bb = np.exp(-gamma * cdist(b, b, "sqeuclidean"))
    k_ab = np.exp(-gamma * cdist(a, b, "sqeuclidean"))

    term_aa = (k_aa.sum() - np.trace(k_aa)) / (m * (m - 1))
    term_bb = (k_bb.sum() - np.trace(k_bb)) / (n * (n - 1))
    if m == n:
        term_ab = (k_ab.sum() - np.trace(k_ab)) / (m * (m - 1))
    else:
        term_ab = k_ab.mean()
    return max(float(term_aa + term_bb - 2.0 * term_ab), 0.0), float(bandwidth)

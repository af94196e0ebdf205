import itertools
import time
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Iterator, List, Optional

from loguru import logger

from commons.metrics import RunMetrics

_sequence = itertools.count()


@dataclass(frozen=True)
class StageRecord:
    stage: str
    task_id: int
    seq: int
    started: float
    finished: float


@contextmanager
def track_stage(
    stage: str,
    task_id: int,
    log: List[StageRecord],
    metrics: Optional[RunMetrics] = None,
) -> Iterator[None]:
    """Time a pipeline stage and append its record to `log` once it finishes.

    Records are appended only for stages that complete; `seq` is a process-wide
    monotone counter so ordering checks do not depend on clock resolution.
    """
    logger.info(f"[task {task_id}] stage '{stage}' started")
    seq = next(_sequence)
    started = time.perf_counter()
    yield
    finished = time.perf_counter()
    duration = finished - started

    log.append(StageRecord(stage=stage, task_id=task_id, seq=seq, started=started, finished=finished))
    if metrics is not None:
        metrics.track_stage(stage, duration)
    logger.info(f"[task {task_id}] stage '{stage}' finished in {duration:.2f}secs")

from typing import Dict, Optional, Type

from commons.metrics import RunMetrics

from distr.learners.agent import CoupledLearner, DistrLearner
from distr.learners.base import BaseLearner
from distr.learners.baselines import EwcLearner, FinetuneLearner, PerfectReplayLearner
from distr.serialisation import ExperimentConfig

LEARNERS: Dict[str, Type[BaseLearner]] = {
    learner.method: learner
    for learner in (DistrLearner, CoupledLearner, FinetuneLearner, EwcLearner, PerfectReplayLearner)
}


def create_learner(config: ExperimentConfig, metrics: Optional[RunMetrics] = None) -> BaseLearner:
    """Factory to create the learner named by `config.method`."""
    method = config.method.lower()
    if method not in LEARNERS:
        raise ValueError(f"Unsupported method: {config.method}")
    return LEARNERS[method](config, metrics)

import sys
from pathlib import Path

import pytest

root_dir = Path(__file__).parent.parent

commons_src = root_dir / "src" / "commons" / "src"
distr_src = root_dir / "src" / "distr" / "src"

sys.path.insert(0, str(commons_src))
sys.path.insert(0, str(distr_src))


@pytest.fixture(scope="session")
def tiny_config():
    """Experiment config small enough to run a whole sequence in seconds."""
    from distr.serialisation import ExperimentConfig

    return ExperimentConfig.model_validate({
        "method": "distr",
        "seeds": [0],
        "suite": {"num_tasks": 2, "horizon": 8},
        "sac": {"hidden_sizes": [16], "batch_size": 16, "buffer_capacity": 500, "warmup_steps": 20,
                "budget_steps": 40},
        "diffusion": {"steps": 5, "hidden_sizes": [32], "t_embed_dim": 4, "batch_size": 4, "epochs": 2},
        "agent": {"n_traj": 3, "window": 10, "bc_epochs": 2, "bc_batch_size": 16},
        "priority": {"n_repeats": 1, "replay_budget": 1},
        "ewc": {"fisher_samples": 10},
        "evaluation": {"n_eval": 2, "compute_reference": False},
    })

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Activation = Literal["tanh", "relu", "identity"]
Method = Literal["distr", "distr_coupled", "finetune", "ewc", "perfect_replay"]


class _Section(BaseModel):
    """Config section: unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")


# ============ Experiment configuration ============

class SuiteConfig(_Section):
    num_tasks: int = Field(default=3, ge=1, description="K, number of tasks in the sequence")
    dt: float = Field(default=0.1, gt=0)
    accel_gain: float = Field(default=2.0, gt=0)
    vmax: float = Field(default=1.0, gt=0)
    gamma: float = Field(default=0.99, gt=0, le=1)
    horizon: int = Field(default=64, ge=1, description="H, fixed episode horizon")
    success_radius: float = Field(default=0.15, gt=0)
    flip_even_tasks: bool = True


class SacConfig(_Section):
    hidden_sizes: List[int] = Field(default=[128, 128], min_length=1)
    activation: Activation = "relu"
    lr: float = Field(default=3e-4, gt=0)
    batch_size: int = Field(default=256, ge=1)
    buffer_capacity: int = Field(default=100_000, ge=1)
    warmup_steps: int = Field(default=1000, ge=0)
    tau: float = Field(default=0.005, gt=0, le=1, description="Polyak coefficient")
    budget_steps: int = Field(default=20_000, ge=0, description="environment steps per task")
    init_alpha: float = Field(default=0.1, gt=0)
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    target_entropy: Optional[float] = Field(default=None, description="defaults to -action_dim")

    @model_validator(mode="after")
    def _check_log_std_bounds(self):
        if self.log_std_min >= self.log_std_max:
            raise ValueError("log_std_min must be below log_std_max")
        return self


class DiffusionConfig(_Section):
    steps: int = Field(default=100, ge=1, description="T, number of diffusion steps")
    beta_start: float = Field(default=1e-4, gt=0, lt=1)
    beta_end: float = Field(default=0.02, gt=0, lt=1)
    hidden_sizes: List[int] = Field(default=[256, 256], min_length=1)
    activation: Activation = "relu"
    t_embed_dim: int = Field(default=32, ge=2)
    lr: float = Field(default=1e-3, gt=0)
    batch_size: int = Field(default=32, ge=1)
    epochs: int = Field(default=300, ge=0)

    @model_validator(mode="after")
    def _check_betas(self):
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")
        if self.t_embed_dim % 2:
            raise ValueError("t_embed_dim must be even")
        return self


class AgentConfig(_Section):
    n_traj: int = Field(default=20, ge=1, description="skilled trajectories kept per task")
    window: int = Field(default=100, ge=1, description="last-W episodes considered for selection")
    bc_epochs: int = Field(default=100, ge=0)
    bc_batch_size: int = Field(default=256, ge=1)
    bc_lr: float = Field(default=1e-3, gt=0)
    lambda_bc: float = Field(default=1.0, ge=0, description="BC weight of the coupled scheme")


class PriorityConfig(_Section):
    mode: Literal["prioritized", "uniform"] = "prioritized"
    noise_sigma: float = Field(default=0.3, ge=0)
    n_repeats: int = Field(default=5, ge=1)
    replay_budget: int = Field(default=3, ge=0, description="M, past tasks replayed per boundary")


class EwcConfig(_Section):
    lambda_ewc: float = Field(default=100.0, ge=0)
    fisher_samples: int = Field(default=1000, ge=1)


class EvaluationConfig(_Section):
    n_eval: int = Field(default=20, ge=1, description="deterministic episodes per success rate")
    compute_reference: bool = True
    evaluate_all_tasks: bool = True


class ExperimentConfig(_Section):
    method: Method = "distr"
    seeds: List[int] = Field(default=[0], min_length=1)
    output_dir: str = "runs"
    suite: SuiteConfig = Field(default_factory=SuiteConfig)
    sac: SacConfig = Field(default_factory=SacConfig)
    diffusion: DiffusionConfig = Field(default_factory=DiffusionConfig)
    agent: AgentConfig = Field(default_factory=AgentConfig)
    priority: PriorityConfig = Field(default_factory=PriorityConfig)
    ewc: EwcConfig = Field(default_factory=EwcConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

    @field_validator("seeds")
    @classmethod
    def _unique_seeds(cls, seeds: List[int]) -> List[int]:
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be unique")
        return seeds

    @model_validator(mode="after")
    def _check_budget(self):
        floor = max(self.sac.warmup_steps, self.suite.horizon)
        if self.sac.budget_steps < floor:
            raise ValueError(
                f"sac.budget_steps ({self.sac.budget_steps}) must cover sac.warmup_steps "
                f"({self.sac.warmup_steps}) and suite.horizon ({self.suite.horizon})"
            )
        return self


# ============ Persisted documents ============

class NetCheckpoint(BaseModel):
    """JSON checkpoint of one multilayer perceptron."""
    layer_sizes: List[int]
    activation: List[Activation] = Field(..., description="one entry per hidden layer")
    weights: List[List[List[float]]]
    biases: List[List[float]]


class TaskPriorityRecord(BaseModel):
    """Per-task replay priority inputs and result."""
    task_id: int = Field(..., ge=0)
    s_k: float = Field(..., ge=0, le=1, description="success rate after learning")
    s_hat_k: float = Field(..., ge=0, le=1, description="success rate under output perturbation")
    s_v: float = Field(..., ge=0, le=1, description="vulnerability")
    s_s: float = Field(..., ge=0, le=1, description="specificity probe, initial success rate")
    priority: float = Field(..., ge=0, le=1)

    @model_validator(mode="after")
    def _check_priority(self):
        if abs(self.priority - (self.s_v + 1.0 - self.s_s) / 2.0) > 1e-12:
            raise ValueError("priority inconsistent with (s_v + 1 - s_s) / 2")
        return self


class MetricsReport(BaseModel):
    method: Method
    seed: int
    average_performance: float
    forward_transfer: Optional[float] = None
    forgetting: float
    per_task_FT: List[Optional[float]] = Field(default=[])
    per_task_F: List[float] = Field(default=[])


class MetricSummary(BaseModel):
    mean: Optional[float]
    std: Optional[float]
    n: int


class RunSummary(BaseModel):
    method: Method
    seeds: List[int]
    metrics: dict[str, MetricSummary]


class ReferenceScores(BaseModel):
    seed: int
    scores: List[float] = Field(..., description="single-task success rate per task")
    fingerprint: str = Field(default="", description="digest of the settings the scores depend on")

    @field_validator("scores")
    @classmethod
    def _rates(cls, scores: List[float]) -> List[float]:
        if any(not 0.0 <= s <= 1.0 for s in scores):
            raise ValueError("reference scores must lie in [0, 1]")
        return scores


class CoverageReport(BaseModel):
    task_id: int
    mmd2: float
    bandwidth: float
    n_real: int
    n_generated: int

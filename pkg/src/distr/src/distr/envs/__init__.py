from distr.envs.tasksuite import (
    GoalController,
    TaskSpec,
    Trajectory,
    make_suite,
    make_task,
    reset,
    rollout,
    step,
    success_rate,
)

__all__ = [
    "GoalController",
    "TaskSpec",
    "Trajectory",
    "make_suite",
    "make_task",
    "reset",
    "rollout",
    "step",
    "success_rate",
]

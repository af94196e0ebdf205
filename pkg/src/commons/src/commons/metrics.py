from pathlib import Path

import psutil
from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, generate_latest

from commons.io import atomic_write_text


class RunMetrics:
    def __init__(self, run_name: str) -> None:
        self.run_name = run_name
        # Own registry per run, several runs can live in one process
        self.registry = CollectorRegistry()

        # 1. Environment interaction counter
        self.env_steps = Counter(
            "distr_env_steps_total",
            "Total environment steps taken",
            ["run", "task"],
            registry=self.registry,
        )

        self.gradient_updates = Counter(
            "distr_gradient_updates_total",
            "Total optimizer updates",
            ["run", "network"],
            registry=self.registry,
        )

        self.episodes = Counter(
            "distr_episodes_total",
            "Total completed training episodes",
            ["run", "task"],
            registry=self.registry,
        )

        # 2. Success matrix entries as they are recorded
        self.success_rate = Gauge(
            "distr_success_rate",
            "Success rate of the general policy",
            ["run", "row", "task"],
            registry=self.registry,
        )

        self.stage_duration = Histogram(
            "distr_stage_duration_seconds",
            "Pipeline stage wall time",
            ["run", "stage"],
            buckets=(0.01, 0.1, 0.5, 1.0, 5.0, 15.0, 60.0, 300.0, 900.0),
            registry=self.registry,
        )

        # 3. CPU utilization gauge
        self.cpu_usage = Gauge(
            "process_cpu_usage_percent",
            "Current CPU usage percentage",
            ["run"],
            registry=self.registry,
        )

        # 4. Memory utilization gauge
        self.memory_usage = Gauge(
            "process_memory_usage_bytes",
            "Current memory usage in bytes",
            ["run"],
            registry=self.registry,
        )

    def track_env_steps(self, task_id: int, steps: int = 1):
        self.env_steps.labels(run=self.run_name, task=str(task_id)).inc(steps)

    def track_update(self, network: str):
        """Increment the optimizer update counter for one network"""
        self.gradient_updates.labels(run=self.run_name, network=network).inc()

    def track_episode(self, task_id: int):
        self.episodes.labels(run=self.run_name, task=str(task_id)).inc()

    def track_success(self, row: int, task_id: int, value: float):
        self.success_rate.labels(run=self.run_name, row=str(row), task=str(task_id)).set(value)

    def track_stage(self, stage: str, duration: float):
        self.stage_duration.labels(run=self.run_name, stage=stage).observe(duration)

    def update_system_metrics(self):
        """Update CPU and memory metrics"""
        process = psutil.Process()
        self.cpu_usage.labels(run=self.run_name).set(process.cpu_percent(interval=None))
        self.memory_usage.labels(run=self.run_name).set(process.memory_info().rss)

    def export(self, path: Path) -> Path:
        """Write the prometheus text exposition of this run."""
        self.update_system_metrics()
        atomic_write_text(Path(path), generate_latest(self.registry).decode("utf-8"))
        return Path(path)

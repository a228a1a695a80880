"""CPU latency benchmarking for single-sequence inference.

Timing uses a monotonic clock around the full forward pass. BLAS thread
pools are pinned for the duration of a run so results are comparable
across hosts; when the host cannot honor the requested thread count the
report records what was actually available.
"""

from __future__ import annotations

import os
import platform
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ParameterError
from .model import ActParams, ModelConfig, forward, init_params, param_count, preset

__all__ = ["BenchConfig", "BenchReport", "benchmark", "sweep"]


@dataclass(frozen=True)
class BenchConfig:
    warmup_runs: int = 10
    timed_runs: int = 100
    threads: int = 8
    batch_size: int = 1
    sequence_length: int = 30
    seed: int = 0

    def __post_init__(self):
        for name in ("warmup_runs", "timed_runs", "threads", "batch_size",
                     "sequence_length"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ParameterError(f"{name} must be a positive integer, "
                                     f"got {value!r}")
        if self.warmup_runs > 10_000 or self.timed_runs > 1_000_000:
            raise ParameterError("run counts are implausibly large")


@dataclass
class BenchReport:
    model: str
    param_count: int
    warmup_runs: int
    timed_runs: int
    threads_requested: int
    threads_effective: int
    host: dict
    latencies_ms: list[float] = field(repr=False)
    mean_ms: float = 0.0
    std_ms: float = 0.0
    median_ms: float = 0.0
    p95_ms: float = 0.0
    min_ms: float = 0.0
    max_ms: float = 0.0

    @classmethod
    def from_raw(cls, *, model, param_count, config, threads_effective,
                 latencies_ms):
        raw = np.asarray(latencies_ms, dtype=np.float64)
        return cls(
            model=model,
            param_count=param_count,
            warmup_runs=config.warmup_runs,
            timed_runs=config.timed_runs,
            threads_requested=config.threads,
            threads_effective=threads_effective,
            host=host_descriptor(),
            latencies_ms=[float(v) for v in raw],
            mean_ms=float(raw.mean()),
            std_ms=float(raw.std()),
            median_ms=float(np.median(raw)),
            p95_ms=float(np.percentile(raw, 95)),
            min_ms=float(raw.min()),
            max_ms=float(raw.max()),
        )

    def to_dict(self):
        return {
            "model": self.model,
            "param_count": self.param_count,
            "warmup_runs": self.warmup_runs,
            "timed_runs": self.timed_runs,
            "threads_requested": self.threads_requested,
            "threads_effective": self.threads_effective,
            "host": self.host,
            "mean_ms": self.mean_ms,
            "std_ms": self.std_ms,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
            "min_ms": self.min_ms,
            "max_ms": self.max_ms,
            "latencies_ms": self.latencies_ms,
        }


def host_descriptor():
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
    }


def bench_input(config: BenchConfig, in_features: int) -> np.ndarray:
    """Deterministic input batch; shared across a sweep for comparability."""
    rng = np.random.default_rng(config.seed)
    shape = (config.batch_size, config.sequence_length, in_features)
    return rng.standard_normal(shape).astype(np.float32)


def _effective_threads(requested: int) -> int:
    available = os.cpu_count() or 1
    effective = min(requested, available)
    if effective < requested:
        warnings.warn(f"requested {requested} threads but host has "
                      f"{available} cpu(s); running with {effective}")
    return effective


def benchmark(params: ActParams, config: BenchConfig = BenchConfig()) -> BenchReport:
    if config.sequence_length > params.config.seq_len:
        raise ParameterError(
            f"sequence_length {config.sequence_length} exceeds the model's "
            f"maximum of {params.config.seq_len}")
    x = bench_input(config, params.config.in_features)
    effective = _effective_threads(config.threads)
    latencies = []
    with threadpool_limits(limits=effective):
        for _ in range(config.warmup_runs):
            forward(x, params)
        for _ in range(config.timed_runs):
            start = time.perf_counter()
            forward(x, params)
            latencies.append((time.perf_counter() - start) * 1e3)
    return BenchReport.from_raw(
        model=params.config.name,
        param_count=param_count(params.config),
        config=config,
        threads_effective=effective,
        latencies_ms=latencies,
    )


def sweep(preset_names, config: BenchConfig = BenchConfig(), *,
          in_features: int = 52, num_classes: int = 20) -> list[BenchReport]:
    """Benchmark several presets against the identical input batch."""
    reports = []
    for name in preset_names:
        model_config = preset(name, in_features=in_features,
                              num_classes=num_classes)
        params = init_params(model_config, seed=config.seed)
        reports.append(benchmark(params, config))
    return reports

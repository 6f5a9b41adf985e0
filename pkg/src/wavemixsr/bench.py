"""Inference latency / throughput measurement."""

from __future__ import annotations

import csv
import gc
import os
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError
from .model import Model, model_forward
from .tensor import DTYPE, Tensor


@dataclass
class BenchReport:
    latency_ms: float  # mean wall time per forward
    median_ms: float
    throughput_fps: float
    warmup_iters: int
    timed_iters: int
    input_size: int
    batch: int = 1
    samples_ms: list[float] = field(default_factory=list, repr=False)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("samples_ms")
        return d

    def table(self) -> str:
        return "\n".join(f"{k:<15} {v:.3f}" if isinstance(v, float) else f"{k:<15} {v}" for k, v in self.row().items())


def benchmark(model: Model, size: int = 64, iters: int = 10, warmup: int = 2, batch: int = 1, seed: int = 0) -> BenchReport:
    """Time eval-mode forwards of a random ``batch x 3 x size x size`` input."""
    if iters < 1 or warmup < 0 or batch < 1 or size < 2:
        raise ParameterError("need iters >= 1, warmup >= 0, batch >= 1, size >= 2")
    x = Tensor(np.random.default_rng(seed).uniform(0, 1, (batch, 3, size, size)).astype(DTYPE))
    for _ in range(warmup):
        model_forward(x, model)
    samples = []
    # like timeit: no collector pauses inside the timed region
    gc.collect()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(iters):
            t0 = time.perf_counter()
            model_forward(x, model)
            samples.append((time.perf_counter() - t0) * 1e3)
    finally:
        if was_enabled:
            gc.enable()
    mean = statistics.fmean(samples)
    return BenchReport(
        latency_ms=mean,
        median_ms=statistics.median(samples),
        throughput_fps=batch * 1e3 / mean,
        warmup_iters=warmup,
        timed_iters=iters,
        input_size=size,
        batch=batch,
        samples_ms=samples,
    )


def write_bench_csv(report: BenchReport, path: str | os.PathLike):
    row = report.row()
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)

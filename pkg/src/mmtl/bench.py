"""Inference throughput measurement: warmed-up wall-clock FPS with batch
latency percentiles, optionally across a thread pool over shared weights.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List

import numpy as np

from .config import ModelConfig
from .data import SyntheticRecipe, generate_synthetic
from .errors import ArgumentError
from .model import Model

WARMUP_BATCHES = 10


@dataclass
class BenchRecord:
    config_hash: str
    param_count: int
    fps: float
    latency_p50_ms: float
    latency_p95_ms: float
    threads: int
    duration_s: float
    batch_size: int

    def lines(self) -> str:
        return (f"config_hash={self.config_hash} param_count={self.param_count} "
                f"fps={self.fps:.3f} p50_ms={self.latency_p50_ms:.3f} "
                f"p95_ms={self.latency_p95_ms:.3f} threads={self.threads} "
                f"duration_s={self.duration_s:.3f} batch={self.batch_size}")


def bench_fps(config: ModelConfig, batch_size: int = 1, duration: float = 2.0,
              threads: int = 1, seed: int = 0,
              weights_dir: str = None) -> BenchRecord:
    """Measure end-to-end sample throughput of the inference path."""
    if duration <= 0:
        raise ArgumentError("bench: duration must be positive")
    if batch_size <= 0 or threads <= 0:
        raise ArgumentError("bench: batch size and threads must be positive")
    model = Model(config)
    if weights_dir:
        model.load_weights(weights_dir)
    recipe = SyntheticRecipe(noise=0.1)
    samples = list(generate_synthetic(recipe, batch_size, seed, config))

    def run_batch() -> float:
        t0 = time.perf_counter()
        for s in samples:
            model.forward_sample(s, train=False)
        return (time.perf_counter() - t0) * 1e3

    for _ in range(WARMUP_BATCHES):
        run_batch()

    latencies: List[float] = []
    start = time.perf_counter()
    if threads == 1:
        while time.perf_counter() - start < duration:
            latencies.append(run_batch())
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            while time.perf_counter() - start < duration:
                futures = [pool.submit(run_batch) for _ in range(threads)]
                latencies.extend(f.result() for f in futures)
    elapsed = time.perf_counter() - start

    total_samples = len(latencies) * batch_size
    return BenchRecord(
        config_hash=config.hash(),
        param_count=model.param_count(),
        fps=total_samples / elapsed,
        latency_p50_ms=float(np.percentile(latencies, 50)),
        latency_p95_ms=float(np.percentile(latencies, 95)),
        threads=threads,
        duration_s=elapsed,
        batch_size=batch_size,
    )

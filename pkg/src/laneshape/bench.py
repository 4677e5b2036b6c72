"""Forward-pass latency measurement and analytic operation counts."""

from __future__ import annotations

import time

import numpy as np

from .model import LaneCurveModel, ModelConfig, count_macs


def bench_forward(config: ModelConfig, repetitions: int = 20, warmup: int = 3,
                  seed: int = 0) -> dict:
    """Mean/stddev wall-clock latency of model.forward on a fixed input."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if warmup < 0:
        raise ValueError("warmup must be >= 0")
    model = LaneCurveModel(config, seed=seed)
    image = np.random.default_rng(seed).uniform(0.0, 1.0,
                                                size=(config.input_h, config.input_w))
    for _ in range(warmup):
        model.forward(image)
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        model.forward(image)
        times.append(time.perf_counter() - t0)
    times_arr = np.array(times)
    return {
        "repetitions": repetitions,
        "mean_ms": float(times_arr.mean() * 1e3),
        "stddev_ms": float(times_arr.std() * 1e3),
        "min_ms": float(times_arr.min() * 1e3),
        "macs": count_macs(config),
    }

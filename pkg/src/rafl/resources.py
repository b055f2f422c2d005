"""Per-device resource availability traces.

Time is measured in FL rounds (one round = 1.0).  A level is the number of
MACs a device can compute per round; it stays constant between change events
whose spacing is exponential with rate ``lam`` changes per round.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .macs import dense_macs, training_macs
from .nn import NetworkSpec


@dataclass(frozen=True)
class ResourceTrace:
    times: np.ndarray
    levels: np.ndarray
    lam: float
    low: float
    high: float

    def __post_init__(self):
        if len(self.times) == 0 or self.times[0] != 0.0:
            raise ValueError("a trace starts with an event at t = 0")
        if len(self.times) != len(self.levels):
            raise ValueError("times and levels differ in length")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("event times must be sorted")

    def __len__(self):
        return len(self.times)

    def level_at(self, t: float) -> float:
        return level_at(self, t)


def generate_trace(lam: float, low: float, high: float, horizon: float, rng: np.random.Generator) -> ResourceTrace:
    """Levels i.i.d. uniform on ``[low, high]`` with Exp(``lam``) gaps up to ``horizon``."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if not 0 < low <= high:
        raise ValueError(f"need 0 < low <= high, got ({low}, {high})")
    times = [0.0]
    if lam > 0:
        t = 0.0
        while True:
            t += rng.exponential(1.0 / lam)
            if t >= horizon:
                break
            times.append(t)
    levels = rng.uniform(low, high, len(times))
    return ResourceTrace(np.asarray(times), levels, float(lam), float(low), float(high))


def level_at(trace: ResourceTrace, t: float) -> float:
    """Level of the latest event at or before ``t``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return float(trace.levels[np.searchsorted(trace.times, t, side="right") - 1])


def level_at_linear(trace: ResourceTrace, t: float) -> float:
    k = 0
    for i, ti in enumerate(trace.times):
        if ti <= t:
            k = i
    return float(trace.levels[k])


def calibrate_range(spec: NetworkSpec, variability: float, local_batches: int,
                    round_duration: float = 1.0) -> tuple[float, float]:
    """``high`` lets a device train the full network on all its batches in one round."""
    if variability < 1:
        raise ValueError("variability must be >= 1")
    high = training_macs(dense_macs(spec)) * local_batches / round_duration
    return high / variability, high


def device_rng(master_seed: int, device_id: int, stream: str = "trace") -> np.random.Generator:
    """Independent generator per (seed, device, stream name)."""
    key = [int(master_seed), int(device_id)] + list(stream.encode())
    return np.random.default_rng(np.random.SeedSequence(key))


def device_traces(n_devices: int, lam: float, low: float, high: float, horizon: float,
                  master_seed: int) -> list[ResourceTrace]:
    return [generate_trace(lam, low, high, horizon, device_rng(master_seed, i)) for i in range(n_devices)]


def export_traces(path, traces: list[ResourceTrace]):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["device", "time", "level"])
        for dev, tr in enumerate(traces):
            for t, lv in zip(tr.times, tr.levels):
                w.writerow([dev, repr(float(t)), repr(float(lv))])

"""Shared state and trajectory-record types used by every propagator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def time_grid(h: float, T: float) -> np.ndarray:
    """Uniform grid 0, h, 2h, ... covering [0, T] with ceil(T/h)+1 points.

    A small tolerance absorbs floating-point noise in T/h so that e.g.
    T=8, h=0.05 yields exactly 161 points.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    if T <= 0:
        raise ValueError(f"horizon must be positive, got {T}")
    n_steps = int(math.ceil(T / h - 1e-9))
    return np.arange(n_steps + 1, dtype=float) * h


@dataclass(frozen=True)
class GaussianState:
    """Mean and variance of the state random variable at one time."""

    mean: float
    var: float

    def __post_init__(self):
        if not np.isfinite(self.mean) or not np.isfinite(self.var):
            raise ValueError(f"state moments must be finite, got ({self.mean}, {self.var})")
        if self.var < 0:
            raise ValueError(f"variance must be nonnegative, got {self.var}")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)


@dataclass(frozen=True)
class TrajectoryMeta:
    """Provenance tag for a trajectory distribution.

    ``n_samples`` is 0 for analytic or approximate propagators and the
    total trajectory count for empirical (sampled) ones.
    """

    method: str
    step_size: float
    n_samples: int = 0


@dataclass(frozen=True)
class TrajectoryDistribution:
    """Per-time mean and variance of a distribution of trajectories."""

    times: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    meta: TrajectoryMeta = field(default=TrajectoryMeta("unknown", 0.0))

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        means = np.asarray(self.means, dtype=float)
        variances = np.asarray(self.variances, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        if not (times.shape == means.shape == variances.shape) or times.ndim != 1:
            raise ValueError("times, means, and variances must be 1-D arrays of equal length")
        if times.size == 0:
            raise ValueError("trajectory must contain at least one time")
        if times[0] != 0.0:
            raise ValueError(f"trajectory must start at t=0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(variances < 0):
            raise ValueError("variances must be nonnegative")

    def __len__(self) -> int:
        return self.times.size

    @property
    def stds(self) -> np.ndarray:
        return np.sqrt(self.variances)

    def state_at(self, index: int) -> GaussianState:
        return GaussianState(float(self.means[index]), float(self.variances[index]))

    @property
    def terminal(self) -> GaussianState:
        return self.state_at(-1)

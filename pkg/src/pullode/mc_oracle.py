"""Sampling-based ground truth for trajectory distributions.

Draws joint vector-field realizations on a grid, interpolates each one into
a deterministic ODE right-hand side, integrates every (field, initial value)
pair with a fixed-step scheme, and reduces the ensemble to per-time moments
in a deterministic order. There is no randomness beyond the field and
initial-value draws, so results are reproducible bit-for-bit from the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .gp_core import sample_on_grid
from .trajectory import GaussianState, TrajectoryDistribution, TrajectoryMeta, time_grid

INTERPOLATIONS = ("linear", "cubic")
INTEGRATORS = ("euler", "rk4")
PAIRINGS = ("cross_product", "one_to_one")


class GridEscape(RuntimeError):
    """A trajectory left the sampling grid; the grid span must be widened.

    Extrapolating a sampled field would silently corrupt the ground truth,
    so escapes are hard errors carrying the escape time and state.
    """

    def __init__(self, time: float, state: float, field_index: int | None = None):
        self.time = time
        self.state = state
        self.field_index = field_index
        where = f" (field {field_index})" if field_index is not None else ""
        super().__init__(
            f"trajectory left the sampling grid at t={time:.6g}, state={state:.6g}{where}; "
            "widen grid_span"
        )


@dataclass(eq=False)
class FieldRealization:
    """One sampled right-hand side f on a grid, evaluable inside its span.

    Cubic interpolation uses the monotone piecewise-cubic Hermite scheme, so
    the interpolant is C^1 without overshoot between nodes; linear is kept
    for speed and for closed-form checks. Evaluation at a grid node returns
    the stored value exactly (node hits are looked up, not interpolated).
    """

    grid: np.ndarray
    values: np.ndarray
    interpolation: str = "cubic"
    _interp: object = dataclass_field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be 1-D and strictly increasing")
        if self.values.shape != self.grid.shape:
            raise ValueError("values must match the grid point-for-point")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
        if self.interpolation == "cubic":
            self._interp = PchipInterpolator(self.grid, self.values, extrapolate=True)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.interpolation == "cubic":
            out = self._interp(x)
        else:
            out = np.interp(x, self.grid, self.values)
        # exact node hits bypass interpolation round-off
        idx = np.searchsorted(self.grid, x)
        idx_c = np.minimum(idx, self.grid.size - 1)
        hit = self.grid[idx_c] == x
        out = np.where(hit, self.values[idx_c], out)
        return out if out.ndim else float(out)


def _step(f, x, h: float, integrator: str):
    if integrator == "euler":
        return x + h * f(x)
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_ode(f, x0, integrator: str, h: float, T: float) -> np.ndarray:
    """Fixed-step integration of an autonomous scalar ODE (no domain checks).

    Accepts a scalar or vector of initial values; returns states with shape
    (n_times,) + shape(x0). Used both for field realizations (via
    integrate_realization) and as the deterministic reference integrator on
    e.g. a posterior mean.
    """
    if integrator not in INTEGRATORS:
        raise ValueError(f"integrator must be one of {INTEGRATORS}")
    times = time_grid(h, T)
    x = np.asarray(x0, dtype=float)
    out = np.empty((times.size,) + x.shape)
    out[0] = x
    for i in range(1, times.size):
        x = _step(f, x, h, integrator)
        out[i] = x
    return out


def integrate_realization(field: FieldRealization, x0, integrator: str,
                          h: float, T: float) -> np.ndarray:
    """Integrate one sampled field from x0, failing hard on grid escape.

    Every evaluation point (including Runge-Kutta stage points) is checked
    against the field's span.
    """
    lo, hi = field.span
    times = time_grid(h, T)
    t_now = [0.0]

    def guarded(x):
        bad = (x < lo) | (x > hi)
        if np.any(bad):
            offender = float(np.atleast_1d(x)[np.atleast_1d(bad)][0])
            raise GridEscape(t_now[0], offender)
        return field(x)

    x = np.asarray(x0, dtype=float)
    out = np.empty((times.size,) + x.shape)
    out[0] = x
    guarded(x)
    for i in range(1, times.size):
        t_now[0] = times[i - 1]
        x = _step(guarded, x, h, integrator)
        out[i] = x
    t_now[0] = times[-1]
    guarded(x)
    return out


@dataclass(frozen=True)
class EnsembleConfig:
    """Sampling ensemble layout: field draws, initial values, and integration."""

    n_fields: int
    n_initial: int
    pairing: str = "cross_product"
    grid_span: tuple[float, float] = (-4.0, 4.0)
    grid_points: int = 400
    integrator: str = "rk4"
    h: float = 0.05
    T: float = 8.0
    seed: int = 0
    interpolation: str = "cubic"

    def __post_init__(self):
        if self.n_fields < 1 or self.n_initial < 1:
            raise ValueError("n_fields and n_initial must be positive")
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}")
        if self.pairing == "one_to_one" and self.n_fields != self.n_initial:
            raise ValueError("one_to_one pairing requires n_fields == n_initial")
        lo, hi = self.grid_span
        if not lo < hi:
            raise ValueError(f"grid_span must satisfy lo < hi, got {self.grid_span}")
        if self.grid_points < 2:
            raise ValueError(f"grid_points must be >= 2, got {self.grid_points}")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"interpolation must be one of {INTERPOLATIONS}")
        if self.h <= 0 or self.T <= 0:
            raise ValueError("h and T must be positive")


def draw_fields(model, cfg: EnsembleConfig) -> list[FieldRealization]:
    """Sample n_fields joint field realizations on the configured grid."""
    lo, hi = cfg.grid_span
    grid = np.linspace(lo, hi, cfg.grid_points)
    sample = sample_on_grid(model, grid, cfg.n_fields, cfg.seed)
    return [FieldRealization(grid, row, cfg.interpolation) for row in sample.values]


def draw_initial_values(x0_dist: GaussianState, n: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return x0_dist.mean + math.sqrt(x0_dist.var) * rng.standard_normal(n)


def iter_trajectory_blocks(fields, x0s: np.ndarray, pairing: str,
                           integrator: str, h: float, T: float):
    """Yield (field_index, x0_indices, block) in a fixed deterministic order.

    Each block holds one trajectory per row. cross_product integrates every
    initial value under every field; one_to_one pairs them index by index.
    """
    if pairing not in PAIRINGS:
        raise ValueError(f"pairing must be one of {PAIRINGS}")
    if pairing == "one_to_one" and len(fields) != x0s.size:
        raise ValueError("one_to_one pairing requires len(fields) == len(x0s)")
    all_idx = np.arange(x0s.size)
    for i, field in enumerate(fields):
        if pairing == "cross_product":
            idx = all_idx
        else:
            idx = all_idx[i:i + 1]
        try:
            block = integrate_realization(field, x0s[idx], integrator, h, T)
        except GridEscape as e:
            raise GridEscape(e.time, e.state, field_index=i) from None
        yield i, idx, block.T


def ensemble_stats(model, x0_dist: GaussianState, cfg: EnsembleConfig,
                   raw_sink=None) -> TrajectoryDistribution:
    """Empirical per-time mean and unbiased variance over the full ensemble.

    Blocks are merged with a streaming pairwise update in field order, so the
    result is independent of how the (embarrassingly parallel) trajectories
    would be scheduled, and memory stays O(n_times) regardless of scale.

    ``raw_sink``, if given, receives (field_index, x0_indices, times, block)
    per field for raw-trajectory dumping.
    """
    fields = draw_fields(model, cfg)
    x0s = draw_initial_values(x0_dist, cfg.n_initial, [cfg.seed, 1])
    times = time_grid(cfg.h, cfg.T)

    count = 0
    mean = np.zeros(times.size)
    m2 = np.zeros(times.size)
    for i, idx, block in iter_trajectory_blocks(
        fields, x0s, cfg.pairing, cfg.integrator, cfg.h, cfg.T
    ):
        if raw_sink is not None:
            raw_sink(i, idx, times, block)
        bn = block.shape[0]
        block_mean = block.mean(axis=0)
        block_m2 = ((block - block_mean) ** 2).sum(axis=0)
        delta = block_mean - mean
        total = count + bn
        mean = mean + delta * (bn / total)
        m2 = m2 + block_m2 + delta * delta * (count * bn / total)
        count = total
    if count < 2:
        variances = np.zeros(times.size)
    else:
        variances = m2 / (count - 1)
    meta = TrajectoryMeta("mc", cfg.h, count)
    return TrajectoryDistribution(times, mean, np.maximum(variances, 0.0), meta)

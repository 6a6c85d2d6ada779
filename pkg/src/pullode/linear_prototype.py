"""Trajectory moments for a distribution of stable linear ODEs dx/dt = -a*x + B.

B ~ N(0, beta) is a random intercept shared along each trajectory, so the
state becomes correlated with the model over time. This module carries the
full closed-form analysis: the analytic flow moments, the naive discrete
recursions that wrongly treat state and model as independent at every step,
their step-size-dependent fixed points, the corrected recursions that track
cov(X_n, B), and sampling over exact per-realization flows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trajectory import GaussianState, TrajectoryDistribution, TrajectoryMeta, time_grid


class InvalidStep(ValueError):
    """Step size outside the validity range of a discrete recursion."""


@dataclass(frozen=True)
class LinearModelDist:
    """f(x) = -a*x + B with decay rate a > 0 and B ~ N(0, beta)."""

    a: float
    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise ValueError(f"decay rate a must be positive, got {self.a}")
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"intercept variance beta must be nonnegative, got {self.beta}")


@dataclass(frozen=True)
class CorrelatedState:
    """State moments plus the accumulated state-model covariance cov(X_n, B)."""

    state: GaussianState
    cov_xb: float = 0.0


def analytic_moments(m: LinearModelDist, x0: GaussianState, t: float) -> GaussianState:
    """Exact flow moments at time t, assuming cov(X_0, B) = 0.

    mean_t = e^{-at} mean_0
    var_t  = e^{-2at} var_0 + (beta/a^2) (1 - e^{-at})^2
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    decay = math.exp(-m.a * t)
    mean = decay * x0.mean
    var = decay * decay * x0.var + (m.beta / m.a**2) * (1.0 - decay) ** 2
    return GaussianState(mean, var)


def exact_fixed_point_var(m: LinearModelDist) -> float:
    """Stationary variance of the exact flow: beta / a^2."""
    return m.beta / m.a**2


def naive_euler_step(m: LinearModelDist, s: GaussianState, h: float) -> GaussianState:
    """One Euler step under the (flawed) state-model independence assumption.

    var_{n+1} = var_n + h^2 beta + h^2 a^2 var_n - 2 h a var_n
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    mean = (1.0 - m.a * h) * s.mean
    var = s.var + h * h * m.beta + h * h * m.a * m.a * s.var - 2.0 * h * m.a * s.var
    return GaussianState(mean, max(var, 0.0))


def naive_euler_fixed_point(m: LinearModelDist, h: float) -> float:
    """Fixed point of the naive Euler variance recursion: (beta/a^2) * ah/(2-ah).

    Only meaningful for 0 < a*h < 2; the expression breaks down at the
    stability limit of the explicit Euler method.
    """
    ah = m.a * h
    if not 0.0 < ah < 2.0:
        raise InvalidStep(
            f"naive Euler fixed point requires 0 < a*h < 2 "
            f"(explicit Euler stability limit), got a*h = {ah:g}"
        )
    return (m.beta / m.a**2) * (ah / (2.0 - ah))


def naive_iter_flow_step(m: LinearModelDist, s: GaussianState, h: float) -> GaussianState:
    """Apply the exact-flow moment map over h as if the state were fresh.

    Equivalent to repeatedly applying a discrete state-space model: the
    state-model covariance accumulated over previous steps is discarded.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    decay = math.exp(-m.a * h)
    mean = decay * s.mean
    var = decay * decay * s.var + (m.beta / m.a**2) * (1.0 - decay) ** 2
    return GaussianState(mean, var)


def iter_flow_fixed_point(m: LinearModelDist, h: float) -> float:
    """Fixed point of the iterated-flow variance recursion: (beta/a^2) * tanh(ah/2)."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    return (m.beta / m.a**2) * math.tanh(m.a * h / 2.0)


def cov_xb_flow(m: LinearModelDist, h: float, n: int) -> float:
    """cov(X_n, B) after n exact flow steps of size h: (beta/a) (1 - e^{-ahn})."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    if n < 0:
        raise ValueError(f"step count must be nonnegative, got {n}")
    return (m.beta / m.a) * (1.0 - math.exp(-m.a * h * n))


def corrected_flow_step(m: LinearModelDist, s: GaussianState, h: float, n: int) -> GaussianState:
    """Flow moment map over h including the state-model covariance term.

    n is the number of steps already taken; iterating from (mean_0, var_0)
    reproduces the analytic moments at t = N*h to round-off, restoring the
    semigroup property the naive map violates.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    if n < 0:
        raise ValueError(f"step count must be nonnegative, got {n}")
    decay = math.exp(-m.a * h)
    scale = m.beta / m.a**2
    mean = decay * s.mean
    var = (
        decay * decay * s.var
        + scale * (1.0 - decay) ** 2
        + 2.0 * scale * (1.0 - decay) * decay * (1.0 - math.exp(-m.a * h * n))
    )
    return GaussianState(mean, var)


def cov_xb_euler(m: LinearModelDist, h: float, n: int) -> float:
    """Closed telescope sum for cov(X_n, B) after n Euler steps.

    h * beta * sum_{i=0}^{n-1} (1-ah)^{n-1-i} = (beta/a) (1 - (1-ah)^n)

    Kept as the test oracle for the O(1) recursion in corrected_euler_step.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    if n < 0:
        raise ValueError(f"step count must be nonnegative, got {n}")
    return (m.beta / m.a) * (1.0 - (1.0 - m.a * h) ** n)


def corrected_euler_step(m: LinearModelDist, cs: CorrelatedState, h: float) -> CorrelatedState:
    """One Euler step propagating mean, variance, and cov(X_n, B) jointly.

    var_{n+1} = (1-ah)^2 var_n + h^2 beta + 2h(1-ah) cov(X_n, B)
    cov_{n+1} = (1-ah) cov_n + h beta
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    g = 1.0 - m.a * h
    s = cs.state
    var = g * g * s.var + h * h * m.beta + 2.0 * h * g * cs.cov_xb
    mean = g * s.mean
    cov = g * cs.cov_xb + h * m.beta
    return CorrelatedState(GaussianState(mean, max(var, 0.0)), cov)


def sample_prototype(m: LinearModelDist, x0: GaussianState, h: float, T: float,
                     n_samples: int, seed: int) -> TrajectoryDistribution:
    """Empirical trajectory moments over exact per-realization flows.

    Draws (x_0, b) pairs, solves each resulting deterministic linear ODE in
    closed form on the time grid, and reports per-time mean and unbiased
    variance. Deterministic for a given seed.
    """
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples for a variance, got {n_samples}")
    rng = np.random.default_rng(seed)
    xs0 = x0.mean + math.sqrt(x0.var) * rng.standard_normal(n_samples)
    bs = math.sqrt(m.beta) * rng.standard_normal(n_samples)
    times = time_grid(h, T)
    decay = np.exp(-m.a * times)
    paths = xs0[:, None] * decay[None, :] + (bs / m.a)[:, None] * (1.0 - decay)[None, :]
    meta = TrajectoryMeta("prototype_sampling", h, n_samples)
    return TrajectoryDistribution(times, paths.mean(axis=0), paths.var(axis=0, ddof=1), meta)


def restart_sampling_demo(m: LinearModelDist, x0: GaussianState, segment_T: float,
                          n_segments: int, n_samples: int, seed: int,
                          points_per_segment: int = 50) -> TrajectoryDistribution:
    """Sampling with periodic restarts from a refitted Gaussian.

    At each segment boundary the ensemble is resampled independently from
    N(empirical mean, empirical var) x N(0, beta), discarding the accumulated
    state-intercept correlation. This reproduces the variance underestimation
    of the iterated moment map with implicit step size segment_T.
    """
    if n_segments < 1:
        raise ValueError(f"need at least one segment, got {n_segments}")
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples for a variance, got {n_samples}")
    if segment_T <= 0:
        raise ValueError(f"segment length must be positive, got {segment_T}")
    rng = np.random.default_rng(seed)
    local_times = np.linspace(0.0, segment_T, points_per_segment + 1)
    decay = np.exp(-m.a * local_times)

    times, means, variances = [], [], []
    cur_mean, cur_var = x0.mean, x0.var
    for seg in range(n_segments):
        xs = cur_mean + math.sqrt(max(cur_var, 0.0)) * rng.standard_normal(n_samples)
        bs = math.sqrt(m.beta) * rng.standard_normal(n_samples)
        paths = xs[:, None] * decay[None, :] + (bs / m.a)[:, None] * (1.0 - decay)[None, :]
        seg_means = paths.mean(axis=0)
        seg_vars = paths.var(axis=0, ddof=1)
        start = 1 if seg > 0 else 0  # boundary point already recorded
        times.append(seg * segment_T + local_times[start:])
        means.append(seg_means[start:])
        variances.append(seg_vars[start:])
        cur_mean, cur_var = float(seg_means[-1]), float(seg_vars[-1])

    meta = TrajectoryMeta("prototype_restart_sampling", segment_T / points_per_segment, n_samples)
    return TrajectoryDistribution(
        np.concatenate(times), np.concatenate(means), np.concatenate(variances), meta
    )


@dataclass(frozen=True)
class LinearVectorField:
    """The linear prototype exposed through the same interface as GpPosterior.

    Represents f(x) = slope*x + B with B ~ N(intercept_mean, intercept_var):
    pointwise mean slope*x + intercept_mean, constant pointwise variance, and
    constant cross-covariance (the randomness is the single shared intercept).
    Lets the downstream propagators run on a model whose trajectory moments
    are known in closed form.
    """

    slope: float
    intercept_mean: float = 0.0
    intercept_var: float = 0.0

    @classmethod
    def from_prototype(cls, m: LinearModelDist) -> "LinearVectorField":
        return cls(slope=-m.a, intercept_mean=0.0, intercept_var=m.beta)

    def posterior_mean(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept_mean

    def posterior_mean_deriv(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape, self.slope) if x.ndim else self.slope

    def posterior_var(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape, self.intercept_var) if x.ndim else self.intercept_var

    def posterior_cov(self, x, xp):
        x, xp = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xp, dtype=float))
        return np.full(x.shape, self.intercept_var) if x.ndim else self.intercept_var

    def posterior_cov_matrix(self, xs) -> np.ndarray:
        n = np.asarray(xs, dtype=float).size
        return np.full((n, n), self.intercept_var)

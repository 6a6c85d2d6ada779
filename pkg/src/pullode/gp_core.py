"""One-dimensional Gaussian-process regression with the squared-exponential kernel.

Provides conditioning on noisy observations, posterior mean / variance /
cross-covariance prediction, the analytic derivative of the posterior mean,
and exact joint sampling of the posterior on a grid via a matrix square root.

The prior mean is zero throughout. A conditioned :class:`GpPosterior` is
immutable and safe to share across concurrent readers; samplers take an
explicit seed and own their RNG.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

# Diagonal stabilization added (scaled by the prior amplitude) before any
# Cholesky factorization, with a single coarser retry on failure.
DEFAULT_JITTER = 1e-9
RETRY_JITTER = 1e-6


class FactorizationFailure(RuntimeError):
    """The (jittered) covariance matrix is not positive definite.

    Signals degenerate conditioning, e.g. duplicate training inputs with
    zero observation noise and no jitter.
    """


@dataclass(frozen=True)
class KernelConfig:
    """Squared-exponential kernel k(x, x') = amplitude * exp(-(x-x')^2 / (2 lengthscale^2))."""

    lengthscale: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not (np.isfinite(self.amplitude) and self.amplitude > 0):
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")


def kernel_eval(cfg: KernelConfig, x, xp):
    """Evaluate the kernel; broadcasts over array arguments."""
    d = np.asarray(x, dtype=float) - np.asarray(xp, dtype=float)
    return cfg.amplitude * np.exp(-0.5 * d * d / (cfg.lengthscale * cfg.lengthscale))


def kernel_deriv_x(cfg: KernelConfig, x, xp):
    """Derivative of the kernel with respect to its first argument.

    d/dx k(x, x') = -((x - x') / lengthscale^2) * k(x, x')
    """
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    return -((x - xp) / (cfg.lengthscale * cfg.lengthscale)) * kernel_eval(cfg, x, xp)


@dataclass(frozen=True)
class TrainingSet:
    """Observations y^i = f(x^i) + eps^i with i.i.d. Gaussian noise of variance noise_var."""

    inputs: np.ndarray
    outputs: np.ndarray
    noise_var: float

    def __post_init__(self):
        inputs = np.atleast_1d(np.asarray(self.inputs, dtype=float))
        outputs = np.atleast_1d(np.asarray(self.outputs, dtype=float))
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        if inputs.ndim != 1 or outputs.ndim != 1 or inputs.size != outputs.size:
            raise ValueError("inputs and outputs must be 1-D arrays of equal length")
        if inputs.size and not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(outputs))):
            raise ValueError("training values must be finite")
        if not np.isfinite(self.noise_var) or self.noise_var < 0:
            raise ValueError(f"noise_var must be nonnegative, got {self.noise_var}")

    @property
    def n(self) -> int:
        return self.inputs.size


def load_training_csv(path, noise_var: float) -> TrainingSet:
    """Load a training set from a CSV file with header ``x,y``."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["x", "y"]:
            raise ValueError(f"{path}: expected CSV header 'x,y', got {header}")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    xs = np.array([r[0] for r in rows])
    ys = np.array([r[1] for r in rows])
    return TrainingSet(xs, ys, noise_var)


@dataclass(frozen=True)
class GpPosterior:
    """A GP conditioned on a training set, with cached factorization.

    The Cholesky factor of (K_xx + noise_var*I + jitter*amplitude*I) and the
    weight vector (K_xx + ...)^{-1} y are computed once at conditioning time,
    so posterior_mean is O(N) per query and posterior_cov is O(N^2).
    """

    training: TrainingSet
    kernel: KernelConfig
    jitter: float
    chol_lower: np.ndarray
    weights: np.ndarray
    gram_inverse: np.ndarray

    @property
    def n(self) -> int:
        return self.training.n

    def posterior_mean(self, x):
        """Posterior mean at x (scalar or array). Zero for an empty training set."""
        x = np.asarray(x, dtype=float)
        if self.n == 0:
            return np.zeros(x.shape) if x.ndim else 0.0
        kx = kernel_eval(self.kernel, x[..., None], self.training.inputs)
        return kx @ self.weights

    def posterior_mean_deriv(self, x):
        """Exact derivative of the posterior mean at x."""
        x = np.asarray(x, dtype=float)
        if self.n == 0:
            return np.zeros(x.shape) if x.ndim else 0.0
        dk = kernel_deriv_x(self.kernel, x[..., None], self.training.inputs)
        return dk @ self.weights

    def posterior_cov(self, x, xp):
        """Posterior cross-covariance cov(f(x), f(x')); broadcasts elementwise.

        The arithmetic path is symmetric in (x, xp), so posterior_cov(x, xp)
        and posterior_cov(xp, x) are bit-identical.
        """
        x, xp = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xp, dtype=float))
        prior = kernel_eval(self.kernel, x, xp)
        if self.n == 0:
            return prior if prior.ndim else float(prior)
        kx = kernel_eval(self.kernel, self.training.inputs[:, None], x.ravel()[None, :])
        kxp = kernel_eval(self.kernel, self.training.inputs[:, None], xp.ravel()[None, :])
        vx = solve_triangular(self.chol_lower, kx, lower=True)
        vxp = solve_triangular(self.chol_lower, kxp, lower=True)
        reduction = np.einsum("ij,ij->j", vx, vxp).reshape(x.shape)
        out = prior - reduction
        return out if out.ndim else float(out)

    def posterior_var(self, x):
        """Posterior variance at x, clamped below at 0 against round-off."""
        return np.maximum(self.posterior_cov(x, x), 0.0)

    def posterior_cov_matrix(self, xs) -> np.ndarray:
        """Dense posterior covariance matrix over a vector of query points."""
        xs = np.asarray(xs, dtype=float)
        prior = kernel_eval(self.kernel, xs[:, None], xs[None, :])
        if self.n == 0:
            return prior
        kx = kernel_eval(self.kernel, self.training.inputs[:, None], xs[None, :])
        v = solve_triangular(self.chol_lower, kx, lower=True)
        return prior - v.T @ v


def _jittered_cholesky(matrix: np.ndarray, scale: float, jitter: float):
    """Cholesky of matrix + jitter*scale*I, retrying once with a coarser jitter."""
    attempts = [jitter]
    if 0 < jitter < RETRY_JITTER:
        attempts.append(RETRY_JITTER)
    n = matrix.shape[0]
    for jit in attempts:
        try:
            return np.linalg.cholesky(matrix + (jit * scale) * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    raise FactorizationFailure(
        f"covariance matrix of size {n} is not positive definite "
        f"(jitter {jitter:g}, retry {RETRY_JITTER:g})"
    )


def condition(training: TrainingSet, kernel: KernelConfig,
              jitter: float = DEFAULT_JITTER) -> GpPosterior:
    """Condition a zero-mean GP prior on a training set.

    Parameters
    ----------
    training : TrainingSet
    kernel : KernelConfig
    jitter : float
        Relative diagonal stabilization, scaled by the kernel amplitude.
        Pass 0 to factorize the raw Gram matrix (no retry).

    Raises
    ------
    FactorizationFailure
        If the jittered Gram matrix is not positive definite.
    """
    n = training.n
    if n == 0:
        empty = np.zeros((0, 0))
        return GpPosterior(training, kernel, jitter, empty, np.zeros(0), empty)
    gram = kernel_eval(kernel, training.inputs[:, None], training.inputs[None, :])
    gram = gram + training.noise_var * np.eye(n)
    chol = _jittered_cholesky(gram, kernel.amplitude, jitter)
    weights = solve_triangular(
        chol.T, solve_triangular(chol, training.outputs, lower=True), lower=False
    )
    gram_inverse = solve_triangular(
        chol.T, solve_triangular(chol, np.eye(n), lower=True), lower=False
    )
    return GpPosterior(training, kernel, jitter, chol, weights, gram_inverse)


@dataclass(frozen=True)
class GridSample:
    """Joint posterior draws restricted to a grid; one row per sample."""

    grid: np.ndarray
    values: np.ndarray
    seed: int

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be 1-D and strictly increasing")
        if values.ndim != 2 or values.shape[1] != grid.size:
            raise ValueError("values must have shape (n_samples, n_grid)")


def _prior_scale(model, cov: np.ndarray) -> float:
    """Jitter scale for sampling: the kernel amplitude when the model has one,
    otherwise the largest posterior variance on the grid (floored at 1)."""
    kernel = getattr(model, "kernel", None)
    if kernel is not None:
        return kernel.amplitude
    return max(float(np.max(np.diag(cov), initial=0.0)), 1.0)


def sample_on_grid(model, grid, n_samples: int, seed: int,
                   jitter: float = DEFAULT_JITTER) -> GridSample:
    """Draw joint samples of the posterior at the grid points.

    Samples are m + C zeta with C the (jittered) Cholesky factor of the
    posterior covariance on the grid and zeta standard normal. Deterministic
    for a given seed.

    Works for any model exposing posterior_mean and posterior_cov_matrix
    (or elementwise posterior_cov), e.g. a GpPosterior or a degenerate
    linear vector-field surrogate.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be 1-D and strictly increasing")
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    mean = np.asarray(model.posterior_mean(grid), dtype=float)
    cov_matrix = getattr(model, "posterior_cov_matrix", None)
    if cov_matrix is not None:
        cov = cov_matrix(grid)
    else:
        cov = np.asarray(model.posterior_cov(grid[:, None], grid[None, :]), dtype=float)
    root = _jittered_cholesky(cov, _prior_scale(model, cov), jitter)
    rng = np.random.default_rng(seed)
    zeta = rng.standard_normal((n_samples, grid.size))
    values = mean + zeta @ root.T
    return GridSample(grid, values, seed)

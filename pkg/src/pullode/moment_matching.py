"""Gaussian output-distribution approximation for one integrator step.

Implements the moment-matched explicit Euler recursion that treats the state
X_n and the vector field as independent at every step. This baseline is kept
deliberately faithful, including its variance underestimation on trajectory
problems; the history-aware correction lives in :mod:`pullode.pull_euler`.

The four Gaussian expectations E[mu(X)], E[sigma^2(X)], E[mu(X)^2], and
E[X mu(X)] are available two ways: Gauss-Hermite quadrature (works for any
model exposing pointwise posterior mean/variance, and serves as the oracle)
and closed forms specific to the squared-exponential kernel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_hermite

from .gp_core import GpPosterior
from .trajectory import GaussianState, TrajectoryDistribution, TrajectoryMeta, time_grid

logger = logging.getLogger(__name__)

DEFAULT_QUADRATURE_ORDER = 60


@dataclass(frozen=True)
class MomentTerms:
    """The four Gaussian expectations of a field model against N(mean, var)."""

    e_mu: float
    e_sigma2: float
    e_mu2: float
    e_xmu: float

    @property
    def var_mu(self) -> float:
        """Variance of the pointwise mean: E[mu(X)^2] - E[mu(X)]^2."""
        return self.e_mu2 - self.e_mu * self.e_mu


def quadrature_moments(model, s: GaussianState, order: int = DEFAULT_QUADRATURE_ORDER) -> MomentTerms:
    """Gauss-Hermite quadrature of the four expectations against N(s.mean, s.var).

    Exact (to round-off) for a point-mass input (s.var == 0) and for models
    whose pointwise mean is polynomial of degree < order. The model only
    needs vectorized posterior_mean and posterior_var.
    """
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    nodes, weights = roots_hermite(order)
    weights = weights / math.sqrt(math.pi)
    x = s.mean + math.sqrt(2.0 * s.var) * nodes
    mu = np.asarray(model.posterior_mean(x), dtype=float)
    sig2 = np.asarray(model.posterior_var(x), dtype=float)
    return MomentTerms(
        e_mu=float(weights @ mu),
        e_sigma2=float(weights @ sig2),
        e_mu2=float(weights @ (mu * mu)),
        e_xmu=float(weights @ (x * mu)),
    )


def closed_form_moments(gp: GpPosterior, s: GaussianState) -> MomentTerms:
    """Closed-form expectations for a squared-exponential-kernel posterior.

    Each term reduces to Gaussian-times-Gaussian integrals. With weights w,
    training inputs x_i, kernel amplitude A and lengthscale l, and input
    N(m, v):

        E[k(X, x_i)]         = A sqrt(l^2/(l^2+v)) exp(-(m-x_i)^2 / (2(l^2+v)))
        E[X k(X, x_i)]       = E[k(X, x_i)] * (m l^2 + x_i v)/(l^2+v)
        E[k(X, x_i)k(X, x_j)] = A^2 exp(-(x_i-x_j)^2/(4 l^2))
                                * sqrt(c/(c+v)) exp(-(m-mid_ij)^2/(2(c+v)))
    with c = l^2/2 and mid_ij the midpoint of (x_i, x_j), from which
    E[mu] = w.q, E[X mu] = w.(q*mtilde), E[mu^2] = w.Q.w, and
    E[sigma^2] = A - sum(G^{-1} * Q) with G the noisy Gram matrix.

    The bilinear forms in w are evaluated in extended precision: for
    ill-conditioned training sets the weights are large with alternating
    signs, and double-precision accumulation of w.Q.w can lose several
    digits to cancellation.
    """
    amp = gp.kernel.amplitude
    if gp.n == 0:
        return MomentTerms(e_mu=0.0, e_sigma2=amp, e_mu2=0.0, e_xmu=0.0)
    ld = np.longdouble
    amp_l = ld(amp)
    ell2 = ld(gp.kernel.lengthscale) ** 2
    m, v = ld(s.mean), ld(s.var)
    xi = gp.training.inputs.astype(ld)
    w = gp.weights.astype(ld)

    t1 = ell2 + v
    q = amp_l * np.sqrt(ell2 / t1) * np.exp(-((m - xi) ** 2) / (2.0 * t1))
    e_mu = float(w @ q)
    xtilde = (m * ell2 + xi * v) / t1
    e_xmu = float(w @ (q * xtilde))

    half = ell2 / 2.0
    t2 = half + v
    diff = xi[:, None] - xi[None, :]
    mid = (xi[:, None] + xi[None, :]) / 2.0
    pair = (
        amp_l * amp_l
        * np.exp(-(diff * diff) / (4.0 * ell2))
        * np.sqrt(half / t2)
        * np.exp(-((m - mid) ** 2) / (2.0 * t2))
    )
    e_mu2 = float(w @ pair @ w)
    e_sigma2 = max(float(amp_l - np.sum(gp.gram_inverse.astype(ld) * pair)), 0.0)
    return MomentTerms(e_mu=e_mu, e_sigma2=e_sigma2, e_mu2=e_mu2, e_xmu=e_xmu)


def linear_model_moments(field, s: GaussianState) -> MomentTerms:
    """Exact expectations for a linear vector field g*x + B, B ~ N(c, beta).

    E[mu(X)] = g m + c, E[sigma^2(X)] = beta,
    E[mu(X)^2] = g^2 (v + m^2) + 2 g c m + c^2,
    E[X mu(X)] = g (v + m^2) + c m.
    """
    g = field.slope
    c = field.intercept_mean
    second = s.var + s.mean * s.mean
    return MomentTerms(
        e_mu=g * s.mean + c,
        e_sigma2=field.intercept_var,
        e_mu2=g * g * second + 2.0 * g * c * s.mean + c * c,
        e_xmu=g * second + c * s.mean,
    )


def mm_euler_step(model, s: GaussianState, h: float, moments=closed_form_moments) -> GaussianState:
    """One moment-matched Euler step X_{n+1} = X_n + h f(X_n).

    mean_{n+1} = mean_n + h E[mu(X_n)]
    var_{n+1}  = var_n + h^2 (E[sigma^2] + E[mu^2] - E[mu]^2)
                 + 2h (E[X mu] - mean_n E[mu])

    ``moments`` maps (model, state) to MomentTerms; the default assumes a
    squared-exponential GpPosterior.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    t = moments(model, s)
    mean = s.mean + h * t.e_mu
    var = s.var + h * h * (t.e_sigma2 + t.var_mu) + 2.0 * h * (t.e_xmu - s.mean * t.e_mu)
    if var < 0.0:
        logger.warning("moment-matching variance clamped to 0 (was %.3e)", var)
        var = 0.0
    return GaussianState(mean, var)


def mm_trajectory(model, x0: GaussianState, h: float, T: float,
                  moments=closed_form_moments) -> TrajectoryDistribution:
    """Iterate mm_euler_step over [0, T]."""
    times = time_grid(h, T)
    means = np.empty(times.size)
    variances = np.empty(times.size)
    state = x0
    means[0], variances[0] = state.mean, state.var
    for i in range(1, times.size):
        state = mm_euler_step(model, state, h, moments=moments)
        means[i], variances[i] = state.mean, state.var
    return TrajectoryDistribution(times, means, variances, TrajectoryMeta("mm", h))

"""Trajectory distributions for ODEs whose right-hand side is a Gaussian process.

The package is organized around one question: given a distribution over
vector fields f (a conditioned GP, or the closed-form linear prototype), what
is the distribution of trajectories of dx/dt = f(x)?

- :mod:`pullode.gp_core` -- 1-D GP regression, prediction, and grid sampling.
- :mod:`pullode.linear_prototype` -- closed-form analysis of f(x) = -a x + B.
- :mod:`pullode.moment_matching` -- the output-approximation Euler baseline
  that treats state and model as independent each step.
- :mod:`pullode.pull_euler` -- locally-linearized Euler with the state-model
  covariance telescope sum.
- :mod:`pullode.mc_oracle` -- sampled-field ensemble ground truth.
- :mod:`pullode.cli` -- experiment runner emitting CSV/JSON artifacts.
"""

__version__ = "0.1.0"

from .trajectory import GaussianState, TrajectoryDistribution, TrajectoryMeta, time_grid
from .gp_core import (
    FactorizationFailure,
    GpPosterior,
    GridSample,
    KernelConfig,
    TrainingSet,
    condition,
    kernel_deriv_x,
    kernel_eval,
    load_training_csv,
    sample_on_grid,
)
from .linear_prototype import (
    CorrelatedState,
    InvalidStep,
    LinearModelDist,
    LinearVectorField,
    analytic_moments,
    corrected_euler_step,
    corrected_flow_step,
    cov_xb_euler,
    cov_xb_flow,
    exact_fixed_point_var,
    iter_flow_fixed_point,
    naive_euler_fixed_point,
    naive_euler_step,
    naive_iter_flow_step,
    restart_sampling_demo,
    sample_prototype,
)
from .moment_matching import (
    MomentTerms,
    closed_form_moments,
    linear_model_moments,
    mm_euler_step,
    mm_trajectory,
    quadrature_moments,
)
from .pull_euler import (
    FULL,
    NONE_HISTORY,
    PullHistory,
    TruncationPolicy,
    linearize,
    product_threshold,
    pull_step,
    pull_trajectory,
    truncation_error_report,
    window,
)
from .mc_oracle import (
    EnsembleConfig,
    FieldRealization,
    GridEscape,
    draw_fields,
    draw_initial_values,
    ensemble_stats,
    integrate_ode,
    integrate_realization,
)

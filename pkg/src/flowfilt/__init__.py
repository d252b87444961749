"""Stochastic particle flow filters for exponential-quadratic Bayesian updates.

The flow moves prior samples to posterior samples along the log-homotopy
``log p(x, lam) = log g(x) + lam log h(x) - log Gamma(lam)`` with a free
diffusion matrix ``Q``; the package also ships closed-form moment
propagation, Kalman oracles and Lyapunov-type stability diagnostics.
"""

__version__ = "0.1.0"

from .dynamics import (
    DiffusionSchedule,
    FlowCoefficients,
    drift_f,
    flow_coefficients,
    gain_K,
    psd_factor,
)
from .errors import (
    DiffusionError,
    DivergenceError,
    FlowFiltError,
    ImproperPosteriorError,
    InsufficientSamplesError,
    SingularHomotopyError,
    ValidationError,
)
from .integrator import (
    Ensemble,
    IntegratorConfig,
    flow_to_posterior,
    rk4_step,
    sample_prior,
    step,
)
from .lyapunov import (
    LV,
    V,
    V1,
    V2,
    DiagnosticsRecord,
    L_log_p,
    LyapunovWeights,
    MemorySink,
    classify_partition,
    cond1_residual,
    gamma,
    lyapunov_weights,
    record,
)
from .moments import MomentState, moment_rhs, propagate_moments
from .oracle import (
    LinearDynamics,
    MeasurementModel,
    conjugate_posterior,
    kalman_filter,
    kalman_update,
    sequential_flow_filter,
)
from .quadratic import (
    Homotopy,
    PosteriorMoments,
    QuadraticLogDensity,
    dlog_gamma,
    from_gaussian_prior,
    from_linear_gaussian_measurement,
    grad_log_p,
    hessian_log_p,
    log_gamma,
    log_p,
    posterior_moments,
)
from .stats import SampleMoments, covariance_gap, mahalanobis_gap, sample_moments

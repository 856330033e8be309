"""SDEs driven by multi-dimensional fractional Brownian motion (H > 1/2):
exact driver sampling, Runge-Kutta and step-N Euler integrators, and a
Monte Carlo strong-convergence harness."""

from .analysis import (
    ConvergenceReport,
    ErrorSample,
    convergence_study,
    deterministic_order,
    fit_loglog_slope,
    holder_seminorm_discrete,
    levy_discrepancy_rate,
    strong_error,
    target_rate_for,
)
from .errors import (
    CapabilityError,
    CapacityError,
    DivergenceError,
    DomainError,
    FbmSdeError,
    InternalError,
    NonconvergenceError,
    ProtocolError,
)
from .fbm import (
    DrivingPath,
    SeedRecord,
    UniformGrid,
    fbm_covariance,
    fgn_covariance,
    restrict,
    sample_path,
    sample_path_cholesky,
    sample_path_circulant,
    validate_hurst,
    write_path_csv,
)
from .problems import (
    CommutativityClass,
    SdeProblem,
    VectorField,
    builtin_problem,
    classify_commutativity,
    directional_derivative,
    validate_jacobian,
)
from .schemes import (
    BUILTIN_TABLEAUS,
    ButcherTableau,
    OrderConditionReport,
    SolverConfig,
    Trajectory,
    check_order_conditions,
    integrate,
    interpolate_linear,
    load_tableau,
    rk_step,
    step_n_euler_step,
)

__version__ = "0.1.0"

"""Regression-based prediction-correction for stochastic time-varying optimization."""

from .coeffs import (
    BasisSpec,
    CoefficientVector,
    Provenance,
    linear_coefficients,
    norm_profile,
    regression_coefficients,
    reproduction_residual,
    sharp_coefficients,
)
from .corrector import (
    DivergenceError,
    GradientOracle,
    ProxSpec,
    contraction_factor,
    prox_gradient,
    soft_threshold,
)
from .harness import (
    MethodSpec,
    NPolicy,
    RunRecord,
    fit_rate,
    run_grid,
    run_sharp,
    run_tvsgd,
    windowed_error,
)
from .predictor import (
    HistoryBuffer,
    OnlineCoeffState,
    ogd_update,
    predict,
    predict_linear_rolling,
    project_A,
)
from .problems import (
    LassoProblem,
    TrajectorySpec,
    empirical_optimum_deviation,
    generate_matrix,
    reference_optimum,
    sample_batch,
    stochastic_gradient,
    trajectory_value,
)

__version__ = "0.1.0"

"""Core modules for msfilter."""

from msfilter.core.config import (
    ConfigError,
    ScenarioConfig,
    bundled_scenarios,
    load_scenario,
    parse_density,
    resolve_output_dir,
)
from msfilter.core.densities import (
    Cauchy,
    DensityError,
    DensityModel,
    DiscreteNoise,
    Divergence,
    ExpPoly,
    Gaussian,
    LambdaCoefficients,
    Laplace,
    Mixture,
    MomentExistenceError,
    RationalSurrogate,
    StudentT,
    PositivityCertificate,
    TailClass,
    certify_positive,
    eval_pdf,
    moment_vector,
    pdf,
    raw_moment,
    tail_class,
)
from msfilter.core.moments import (
    DegenerateObservationError,
    HankelMatrix,
    MomentError,
    MomentSequence,
    hankel_from,
    is_positive_definite,
    measurement_update_moments,
    time_update,
)
from msfilter.core.quadrature import (
    QuadratureConfig,
    QuadratureConvergenceError,
    QuadratureError,
    integrate_interval,
    integrate_line,
)
from msfilter.core.surrogate import (
    NonConvergenceError,
    SolverConfig,
    SurrogateProblem,
    SurrogateResult,
    solve,
)

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "bundled_scenarios",
    "load_scenario",
    "parse_density",
    "resolve_output_dir",
    "Cauchy",
    "DensityError",
    "DensityModel",
    "DiscreteNoise",
    "Divergence",
    "ExpPoly",
    "Gaussian",
    "LambdaCoefficients",
    "Laplace",
    "Mixture",
    "MomentExistenceError",
    "RationalSurrogate",
    "StudentT",
    "PositivityCertificate",
    "TailClass",
    "certify_positive",
    "eval_pdf",
    "moment_vector",
    "pdf",
    "raw_moment",
    "tail_class",
    "DegenerateObservationError",
    "HankelMatrix",
    "MomentError",
    "MomentSequence",
    "hankel_from",
    "is_positive_definite",
    "measurement_update_moments",
    "time_update",
    "QuadratureConfig",
    "QuadratureConvergenceError",
    "QuadratureError",
    "integrate_interval",
    "integrate_line",
    "NonConvergenceError",
    "SolverConfig",
    "SurrogateProblem",
    "SurrogateResult",
    "solve",
]

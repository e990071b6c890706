"""Filtering loop, reference filters and diagnostics for msfilter."""

from msfilter.filtering.diagnostics import (
    BoundReport,
    fit_maxent,
    kl_divergence,
    moment_error_constants,
    shannon_entropy,
    total_variation,
    tv_upper_bound,
)
from msfilter.filtering.filter import (
    FilterError,
    FilterRun,
    FilterSettings,
    FilterState,
    FilterStepError,
    PriorSpec,
    choose_prior,
    init_state,
    run,
    simulate_observations,
    step,
)
from msfilter.filtering.oracle import (
    GridDensity,
    OracleSettings,
    WindowError,
    grid_measurement_update,
    grid_moments,
    grid_time_update,
    kalman_recursion,
    run_grid_filter,
    to_grid,
)
from msfilter.filtering.pipeline import (
    PipelineError,
    ScenarioResult,
    run_scenario,
    run_scenario_safe,
)
from msfilter.filtering.system import SystemModel

__all__ = [
    "BoundReport",
    "fit_maxent",
    "kl_divergence",
    "moment_error_constants",
    "shannon_entropy",
    "total_variation",
    "tv_upper_bound",
    "FilterError",
    "FilterRun",
    "FilterSettings",
    "FilterState",
    "FilterStepError",
    "PriorSpec",
    "choose_prior",
    "init_state",
    "run",
    "simulate_observations",
    "step",
    "GridDensity",
    "OracleSettings",
    "WindowError",
    "grid_measurement_update",
    "grid_moments",
    "grid_time_update",
    "kalman_recursion",
    "run_grid_filter",
    "to_grid",
    "PipelineError",
    "ScenarioResult",
    "run_scenario",
    "run_scenario_safe",
    "SystemModel",
]

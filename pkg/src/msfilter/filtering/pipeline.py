"""Scenario pipeline for msfilter.

Runs one scenario end to end: build the densities and system from the
config, fit or filter, compute diagnostics, and write the result files.
Each mode has its own run_* function; run_scenario dispatches on the mode.
"""

from __future__ import annotations

import math
import sys
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from msfilter.core.config import ConfigError, ScenarioConfig
from msfilter.core.densities import (
    DensityModel,
    Gaussian,
    RationalSurrogate,
    moment_vector,
    pdf,
)
from msfilter.core.moments import DegenerateObservationError, MomentSequence
from msfilter.core.output import (
    DENSITY_FILE,
    ERROR_FILE,
    PLOT_DATA_FILE,
    STEPS_FILE,
    SUMMARY_FILE,
    density_record,
    write_density_table,
    write_error_record,
    write_plot_data,
    write_steps_table,
    write_summary,
)
from msfilter.core.quadrature import QuadratureError
from msfilter.core.surrogate import NonConvergenceError, SurrogateProblem, solve
from msfilter.filtering.diagnostics import (
    BoundReport,
    MaxEntError,
    fit_maxent,
    moment_gap,
    total_variation,
    tv_upper_bound,
)
from msfilter.filtering.filter import (
    FilterRun,
    FilterSettings,
    FilterStepError,
    PriorSpec,
    choose_prior,
    run,
    simulate_observations,
)
from msfilter.filtering.oracle import (
    OracleSettings,
    grid_moments,
    kalman_recursion,
    run_grid_filter,
)
from msfilter.filtering.system import SystemModel

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_DEGENERATE = 4
EXIT_QUADRATURE = 5

TABLE_POINTS = 801
TABLE_HALF_WIDTH = 8.0

Progress = Callable[[str], None]


class PipelineError(Exception):
    """Raised when a scenario cannot be run in the requested mode."""


@dataclass
class PipelineWarning:
    """Represents a non-fatal warning during a scenario run."""

    stage: str
    message: str


@dataclass
class ScenarioResult:
    """Result of a successful scenario run.

    Attributes:
        name: Scenario name.
        mode: fit, filter, bound or compare.
        out_dir: Directory the files were written to.
        files: Paths of the written files.
        summary: The summary record, as written to summary.yaml.
        warnings: Non-fatal warnings encountered during the run.
    """

    name: str
    mode: str
    out_dir: Path
    files: list[Path] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    warnings: list[PipelineWarning] = field(default_factory=list)


def _display_warning(message: str) -> None:
    """Display a warning message to stderr."""
    print(f"Warning: {message}", file=sys.stderr)


def _display_error(message: str) -> None:
    """Display an error message to stderr."""
    print(f"Error: {message}", file=sys.stderr)


def _warn(warnings: list[PipelineWarning], stage: str, message: str) -> None:
    _display_warning(message)
    warnings.append(PipelineWarning(stage=stage, message=message))


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code of its family."""
    if isinstance(error, FilterStepError):
        error = error.cause
    match error:
        case ConfigError():
            return EXIT_CONFIG
        case NonConvergenceError() | MaxEntError():
            return EXIT_NONCONVERGENCE
        case DegenerateObservationError():
            return EXIT_DEGENERATE
        case QuadratureError():
            return EXIT_QUADRATURE
    return EXIT_FAILURE


def prior_spec(config: ScenarioConfig) -> PriorSpec:
    """Filter prior settings from the scenario's [prior] table."""
    prior = config.prior
    return PriorSpec(
        mode=prior.mode,  # type: ignore[arg-type]
        c=prior.c,
        scale=prior.scale,
        density=prior.density,
    )


def filter_settings(config: ScenarioConfig) -> FilterSettings:
    return FilterSettings(
        order=config.order,
        prior=prior_spec(config),
        solver=config.solver,
        quadrature=config.quadrature,
        truncate_radius=config.truncate_radius,
    )


def oracle_settings(config: ScenarioConfig) -> OracleSettings:
    oracle = config.oracle
    return OracleSettings(
        n_points=oracle.n_points,
        half_width=oracle.half_width,
        leak_tol=oracle.leak_tol,
        allow_truncation=oracle.allow_truncation,
    )


def build_system(config: ScenarioConfig) -> SystemModel:
    """The SystemModel described by the scenario's [system] table."""
    if config.system is None:
        raise PipelineError(f"Scenario '{config.name}' has no [system] table")
    s = config.system
    return SystemModel(s.f, s.h, s.process_noise, s.obs_noise, s.horizon)


def _table_grid(moments: MomentSequence) -> np.ndarray:
    spread = math.sqrt(max(moments.variance, 0.0)) or 1.0
    return np.linspace(
        moments.mean - TABLE_HALF_WIDTH * spread,
        moments.mean + TABLE_HALF_WIDTH * spread,
        TABLE_POINTS,
    )


def _bound_record(report: BoundReport) -> dict[str, Any]:
    record: dict[str, Any] = {
        "entropy_surrogate": report.entropy_surrogate,
        "entropy_maxent": report.entropy_maxent,
        "surrogate_term": report.surrogate_term,
        "bound_value": report.bound_value,
    }
    if report.entropy_truth is not None:
        record["entropy_truth"] = report.entropy_truth
        record["truth_term"] = report.truth_term
    if report.measured_tv is not None:
        record["measured_tv"] = report.measured_tv
        record["holds"] = report.holds()
    record["assumptions_hold"] = report.assumptions_hold
    if report.notes:
        record["notes"] = list(report.notes)
    return record


def _reference_q_record(
    lam_coeffs: tuple[float, ...], reference: tuple[float, ...]
) -> dict[str, Any]:
    n = max(len(lam_coeffs), len(reference))
    ours = np.zeros(n)
    ours[: len(lam_coeffs)] = lam_coeffs
    theirs = np.zeros(n)
    theirs[: len(reference)] = reference
    deviation = np.abs(ours - theirs) / np.maximum(np.abs(theirs), 1e-300)
    return {
        "reference": list(reference),
        "relative_deviation": deviation.tolist(),
        "max_relative_deviation": float(deviation.max()),
        "sign_pattern_matches": bool(np.all(np.sign(ours) == np.sign(theirs))),
    }


@dataclass
class _Fit:
    target_moments: MomentSequence
    prior: DensityModel
    surrogate: RationalSurrogate
    summary: dict[str, Any]
    maxent: DensityModel | None = None
    bound: BoundReport | None = None


def _fit(config: ScenarioConfig, warnings: list[PipelineWarning], require_bound: bool) -> _Fit:
    target = config.target
    if target is None:
        raise PipelineError(f"Scenario '{config.name}' has no [target] record")
    if isinstance(target, MomentSequence):
        moments = target.truncate(config.order)
        truth: DensityModel | None = None
    else:
        truth = target
        moments = moment_vector(
            target, config.order, config.truncate_radius, config.quadrature
        )
        if moments.provenance.kind == "truncated":
            _warn(
                warnings,
                "moments",
                f"Target moments truncated to [-{moments.provenance.radius:g}, "
                f"{moments.provenance.radius:g}]; {moments.provenance.outside_mass:.3g} "
                "of the mass lies outside",
            )

    spec = prior_spec(config)
    if spec.mode == "explicit":
        assert spec.density is not None
        prior = spec.density
    else:
        prior = choose_prior(moments, spec.c, spec.mode, spec.scale)

    result = solve(SurrogateProblem(prior, moments), config.solver, config.quadrature)
    q = result.lambda_hat.in_standard_basis().coeffs
    summary: dict[str, Any] = {
        "name": config.name,
        "mode": config.mode,
        "order": config.order,
        "target": density_record(target),
        "target_moments": list(moments.values),
        "moment_provenance": {
            "kind": moments.provenance.kind,
            "error": moments.provenance.error,
            "radius": moments.provenance.radius,
            "outside_mass": moments.provenance.outside_mass,
        },
        "prior": density_record(prior),
        "q": list(q),
        "normalizer": result.density.normalizer,
        "iterations": result.iterations,
        "path_steps": result.path_steps,
        "residual": result.residual,
        "objective": result.objective_trace[-1] if result.objective_trace else None,
        "min_hessian_eigenvalue": (
            min(result.hessian_min_eigenvalues) if result.hessian_min_eigenvalues else None
        ),
    }
    if truth is not None:
        summary["tv"] = total_variation(result.density, truth, config.quadrature)
    if config.reference_tv is not None:
        summary["reference_tv"] = config.reference_tv
    if config.reference_q is not None:
        summary["reference_q"] = _reference_q_record(tuple(q), config.reference_q)

    fit = _Fit(moments, prior, result.density, summary)
    try:
        fit.maxent = fit_maxent(moments, config.solver, config.quadrature)
    except (MaxEntError, QuadratureError) as e:
        if require_bound:
            raise
        _warn(warnings, "maxent", f"Maximum-entropy fit failed, no entropy bound: {e}")
        return fit

    fit.bound = tv_upper_bound(fit.surrogate, fit.maxent, truth, config.quadrature)
    summary["bound"] = _bound_record(fit.bound)
    if not fit.bound.assumptions_hold:
        _warn(warnings, "bound", "Bound assumptions do not hold: " + "; ".join(fit.bound.notes))
    return fit


def _write_fit_files(
    fit: _Fit,
    config: ScenarioConfig,
    out_dir: Path,
    plot_data: bool,
) -> list[Path]:
    xs = _table_grid(fit.target_moments)
    columns: dict[str, Any] = {"surrogate": pdf(fit.surrogate, xs)}
    if not isinstance(config.target, MomentSequence) and config.target is not None:
        columns["truth"] = pdf(config.target, xs)
    if fit.maxent is not None:
        columns["maxent"] = pdf(fit.maxent, xs)

    files = [
        write_summary(out_dir / SUMMARY_FILE, fit.summary),
        write_density_table(out_dir / DENSITY_FILE, xs.tolist(), columns),
    ]
    if plot_data:
        series = {name: (xs.tolist(), list(values)) for name, values in columns.items()}
        files.append(write_plot_data(out_dir / PLOT_DATA_FILE, series))
    return files


def run_fit(config: ScenarioConfig, out_dir: Path, plot_data: bool = False) -> ScenarioResult:
    """Fit a surrogate to the target and write summary.yaml and density.csv.

    A failing maximum-entropy fit only drops the entropy bound, with a warning.
    """
    warnings: list[PipelineWarning] = []
    fit = _fit(config, warnings, require_bound=False)
    files = _write_fit_files(fit, config, out_dir, plot_data or config.output.plot_data)
    return ScenarioResult(config.name, "fit", out_dir, files, fit.summary, warnings)


def run_bound(config: ScenarioConfig, out_dir: Path, plot_data: bool = False) -> ScenarioResult:
    """Fit a surrogate and its maximum-entropy counterpart and report the bound.

    Raises:
        MaxEntError: If the maximum-entropy density cannot be fitted.
    """
    warnings: list[PipelineWarning] = []
    fit = _fit(config, warnings, require_bound=True)
    files = _write_fit_files(fit, config, out_dir, plot_data or config.output.plot_data)
    return ScenarioResult(config.name, "bound", out_dir, files, fit.summary, warnings)


def _is_linear_gaussian(system: SystemModel, init: DensityModel | MomentSequence) -> bool:
    noises = system.process_noise[: system.horizon] + system.obs_noise[: system.horizon]
    return isinstance(init, Gaussian) and all(isinstance(n, Gaussian) for n in noises)


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1.0)


def run_filter(
    config: ScenarioConfig,
    out_dir: Path,
    oracle: bool = False,
    plot_data: bool = False,
    progress: Progress | None = None,
) -> ScenarioResult:
    """Run the surrogate filter over the scenario's observations.

    Observations are simulated with the scenario seed when the scenario does
    not list them. With the oracle, the grid filter runs over the same
    observations and every step records the distance to it.
    """
    warnings: list[PipelineWarning] = []
    system = build_system(config)
    sc = config.system
    assert sc is not None
    settings = filter_settings(config)

    init: DensityModel | MomentSequence = sc.init
    if sc.fit_init:
        assert not isinstance(sc.init, MomentSequence)
        init = moment_vector(sc.init, config.order, config.truncate_radius, config.quadrature)
    reference_init = sc.truth_init or (None if isinstance(sc.init, MomentSequence) else sc.init)

    simulated = sc.observations is None
    if sc.observations is not None:
        observations = list(sc.observations)
    else:
        assert reference_init is not None
        _, observations = simulate_observations(system, reference_init, sc.horizon, config.seed)

    filtered: FilterRun = run(system, observations, init, settings)
    if progress is not None:
        for state in filtered.states[: len(observations)]:
            residual = state.diagnostics.get("residual")
            note = f", residual {residual:.2e}" if residual is not None else ""
            progress(f"  step {state.t}: mean {state.pred_moments.mean:.6g}{note}")

    use_oracle = oracle or config.oracle.enabled
    rows: list[dict[str, Any]] = [
        {"t": state.t, "y": y, "moments": state.pred_moments.values}
        for state, y in zip(filtered.states, observations, strict=False)
    ]
    summary: dict[str, Any] = {
        "name": config.name,
        "mode": config.mode,
        "order": config.order,
        "steps": len(observations),
        "observations": "simulated" if simulated else "replayed",
        "prior": {"mode": config.prior.mode, "c": config.prior.c, "scale": config.prior.scale},
        "iterations": [s.diagnostics.get("iterations") for s in filtered.states],
        "final_prediction": density_record(filtered.states[-1].prediction),
        "final_moments": list(filtered.states[-1].pred_moments.values),
    }
    if simulated:
        summary["seed"] = config.seed

    series: dict[str, tuple[list[float], list[float]]] = {
        "pred_mean": (
            [float(s.t) for s in filtered.states],
            [s.pred_moments.mean for s in filtered.states],
        ),
        "pred_variance": (
            [float(s.t) for s in filtered.states],
            [s.pred_moments.variance for s in filtered.states],
        ),
    }

    if use_oracle and reference_init is None:
        _warn(warnings, "oracle", "Grid oracle needs a density init or truth_init; skipped")
        use_oracle = False
    if use_oracle:
        assert reference_init is not None
        grid = run_grid_filter(
            system, reference_init, observations, oracle_settings(config), config.quadrature
        )
        tvs: list[float] = []
        gaps: list[float] = []
        for state, pred in zip(filtered.states, grid.predictions, strict=True):
            tvs.append(total_variation(state.prediction, pred, config.quadrature))
            gaps.append(moment_gap(state.pred_moments, grid_moments(pred, config.order)))
        for row, tv, gap in zip(rows, tvs, gaps, strict=False):
            row["tv_oracle"] = tv
            row["moment_gap"] = gap
        summary["oracle"] = {
            "tv": tvs,
            "moment_gap": gaps,
            "max_tv": max(tvs),
            "max_moment_gap": max(gaps),
            "final_tv": tvs[-1],
        }
        final = grid.predictions[-1]
        series["oracle_final"] = (final.xs.tolist(), final.values.tolist())

    if _is_linear_gaussian(system, sc.init) and isinstance(sc.init, Gaussian):
        track = kalman_recursion(system, sc.init.mean, sc.init.std**2, observations)
        mean_errors = [
            _relative(s.pred_moments.mean, m)
            for s, m in zip(filtered.states, track.pred_means, strict=True)
        ]
        var_errors = [
            _relative(s.pred_moments.variance, v)
            for s, v in zip(filtered.states, track.pred_vars, strict=True)
        ]
        summary["kalman"] = {
            "max_mean_error": max(mean_errors),
            "max_variance_error": max(var_errors),
        }

    if config.reference_tv is not None:
        summary["reference_tv"] = config.reference_tv

    final_state = filtered.states[-1]
    xs = _table_grid(final_state.pred_moments)
    series["surrogate_final"] = (xs.tolist(), pdf(final_state.prediction, xs).tolist())

    files = [
        write_summary(out_dir / SUMMARY_FILE, summary),
        write_steps_table(out_dir / STEPS_FILE, rows, config.order, use_oracle),
    ]
    if plot_data or config.output.plot_data:
        files.append(write_plot_data(out_dir / PLOT_DATA_FILE, series))
    filtered.summary.update(summary)
    return ScenarioResult(config.name, config.mode, out_dir, files, summary, warnings)


def run_compare(
    config: ScenarioConfig,
    out_dir: Path,
    plot_data: bool = False,
    progress: Progress | None = None,
) -> ScenarioResult:
    """Surrogate filter and grid oracle side by side; the oracle is always on."""
    return run_filter(config, out_dir, oracle=True, plot_data=plot_data, progress=progress)


def run_scenario(
    config: ScenarioConfig,
    out_dir: Path,
    oracle: bool = False,
    plot_data: bool = False,
    seed: int | None = None,
    progress: Progress | None = None,
) -> ScenarioResult:
    """Run a scenario in its configured mode.

    Args:
        config: The validated scenario.
        out_dir: Directory for the result files.
        oracle: Force the grid oracle on in filter mode.
        plot_data: Also write the long-format plot table.
        seed: Override of the scenario seed.
        progress: Receives one line per filter step.

    Raises:
        PipelineError: If the scenario lacks what its mode needs.
    """
    if seed is not None:
        config = replace(config, seed=seed)
    match config.mode:
        case "fit":
            return run_fit(config, out_dir, plot_data)
        case "bound":
            return run_bound(config, out_dir, plot_data)
        case "filter":
            return run_filter(config, out_dir, oracle, plot_data, progress)
        case "compare":
            return run_compare(config, out_dir, plot_data, progress)
    raise PipelineError(f"Unknown mode '{config.mode}'")


def run_scenario_safe(
    config: ScenarioConfig,
    out_dir: Path,
    oracle: bool = False,
    plot_data: bool = False,
    seed: int | None = None,
    progress: Progress | None = None,
) -> tuple[ScenarioResult | None, int]:
    """Run a scenario, reporting failures instead of raising.

    On failure the error is printed to stderr and recorded in error.yaml in
    out_dir.

    Returns:
        (result, exit code); result is None on failure.
    """
    try:
        return run_scenario(config, out_dir, oracle, plot_data, seed, progress), EXIT_OK
    except Exception as e:
        code = exit_code_for(e)
        step = e.step if isinstance(e, FilterStepError) else None
        _display_error(f"{config.name}: {e}")
        try:
            write_error_record(out_dir / ERROR_FILE, e, code, step)
        except OSError as write_error:
            _display_warning(f"Could not write error record: {write_error}")
        return None, code

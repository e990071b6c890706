"""Bayesian filtering with moment-matched rational surrogates.

One filter step takes the current predicted density of x_t, conditions it
on y_t to get posterior moments, pushes those moments through the dynamics,
and refits a surrogate theta/q to the predicted moments. Only moments cross
the time update, so the recursion stays closed for arbitrary noise.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from typing import Any, Literal

import numpy as np

from msfilter.core.densities import (
    Cauchy,
    DensityError,
    DensityModel,
    DiscreteNoise,
    Gaussian,
    Laplace,
    Mixture,
    StudentT,
    moment_vector,
)
from msfilter.core.moments import (
    MomentSequence,
    hankel_from,
    is_positive_definite,
    measurement_update_moments,
    time_update,
)
from msfilter.core.quadrature import QuadratureConfig
from msfilter.core.surrogate import SolverConfig, SurrogateProblem, solve
from msfilter.filtering.system import SystemModel, noise_moments

PriorMode = Literal["gaussian", "cauchy", "matched", "explicit"]
VALID_PRIOR_MODES: frozenset[str] = frozenset({"gaussian", "cauchy", "matched", "explicit"})
SECOND_MOMENT_TOL = 1e-12


class FilterError(Exception):
    """Raised when the filter is set up inconsistently."""


class PriorSelectionError(FilterError):
    """Raised when a prior cannot be chosen for a moment sequence."""


class FilterStepError(FilterError):
    """Raised when a filter step fails.

    Attributes:
        step: Time index of the failing step.
        cause: The underlying exception.
    """

    def __init__(self, step: int, cause: Exception) -> None:
        super().__init__(f"Step {step} failed: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class PriorSpec:
    """How the reference density theta is chosen at every refit.

    Attributes:
        mode: "gaussian" uses N(sigma_1, c*sigma_2); "cauchy" uses
            Cauchy(sigma_1, scale); "matched" uses the Gaussian with the
            target's own mean and variance; "explicit" always uses density.
        c: Variance inflation of the "gaussian" mode, greater than 1.
        scale: Scale of the "cauchy" mode.
        density: The fixed prior of the "explicit" mode.
    """

    mode: PriorMode = "gaussian"
    c: float = 3.0
    scale: float | None = None
    density: DensityModel | None = None

    def __post_init__(self) -> None:
        if self.mode not in VALID_PRIOR_MODES:
            raise PriorSelectionError(
                f"Unknown prior mode '{self.mode}'. "
                f"Valid options: {', '.join(sorted(VALID_PRIOR_MODES))}"
            )
        if self.mode == "gaussian" and not self.c > 1:
            raise PriorSelectionError(f"Variance inflation c must exceed 1, got {self.c}")
        if self.mode == "cauchy" and not (self.scale is not None and self.scale > 0):
            raise PriorSelectionError("Cauchy prior mode needs a positive scale")
        if self.mode == "explicit" and self.density is None:
            raise PriorSelectionError("Explicit prior mode needs a density")


def choose_prior(
    pred_moments: MomentSequence,
    c: float = 3.0,
    mode: PriorMode = "gaussian",
    scale: float | None = None,
) -> DensityModel:
    """Pick the reference density for a surrogate fit.

    The Gaussian mode centres at sigma_1 with variance c*sigma_2, c > 1, so
    the prior is wider than the target.

    Raises:
        PriorSelectionError: If sigma_2 is not positive or is below sigma_1^2.
    """
    if pred_moments.order < 2:
        raise PriorSelectionError("Prior selection needs moments up to order 2")
    s1, s2 = pred_moments[1], pred_moments[2]
    if not s2 > 0 or s2 < s1 * s1 - SECOND_MOMENT_TOL * max(1.0, s1 * s1):
        raise PriorSelectionError(
            f"Impossible second moment: sigma_2={s2!r} with sigma_1={s1!r}"
        )
    match mode:
        case "gaussian":
            if not c > 1:
                raise PriorSelectionError(f"Variance inflation c must exceed 1, got {c}")
            return Gaussian(s1, math.sqrt(c * s2))
        case "cauchy":
            if scale is None or not scale > 0:
                raise PriorSelectionError("Cauchy prior mode needs a positive scale")
            return Cauchy(s1, scale)
        case "matched":
            return Gaussian(s1, math.sqrt(max(s2 - s1 * s1, 0.0)) or math.sqrt(s2))
    raise PriorSelectionError(f"Prior mode '{mode}' does not derive a prior from moments")


def prior_for(spec: PriorSpec, moments: MomentSequence) -> DensityModel:
    """Resolve a PriorSpec against the moments being fitted."""
    if spec.mode == "explicit":
        assert spec.density is not None
        return spec.density
    return choose_prior(moments, spec.c, spec.mode, spec.scale)


@dataclass(frozen=True)
class FilterSettings:
    """Everything a filter step needs besides the system and observation."""

    order: int
    prior: PriorSpec = field(default_factory=PriorSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    truncate_radius: float | None = None

    def __post_init__(self) -> None:
        if self.order < 2 or self.order % 2 == 1 or self.order > 16:
            raise FilterError(f"Order must be even between 2 and 16, got {self.order}")


@dataclass(frozen=True)
class FilterState:
    """The filter at time t.

    Attributes:
        t: Time index.
        prediction: Density of x_t given y_0..y_{t-1}.
        pred_moments: Moments the prediction was fitted to.
        posterior_moments: Moments after conditioning on y_t, once known.
        diagnostics: Per-step solver and measurement-update figures.
    """

    t: int
    prediction: DensityModel
    pred_moments: MomentSequence
    posterior_moments: MomentSequence | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)


def _refit(
    moments: MomentSequence, settings: FilterSettings
) -> tuple[DensityModel, dict[str, Any]]:
    prior = prior_for(settings.prior, moments)
    result = solve(SurrogateProblem(prior, moments), settings.solver, settings.quadrature)
    return result.density, {
        "iterations": result.iterations,
        "residual": result.residual,
        "prior": prior,
    }


def init_state(init: DensityModel | MomentSequence, settings: FilterSettings) -> FilterState:
    """Initial state from a density, or from moments via a surrogate fit.

    Raises:
        FilterError: If a moment sequence has a non-positive-definite Hankel matrix.
    """
    if isinstance(init, MomentSequence):
        if init.order < settings.order:
            raise FilterError(
                f"Initial moments have order {init.order}, filter needs {settings.order}"
            )
        moments = init.truncate(settings.order)
        check = is_positive_definite(hankel_from(moments))
        if not check:
            raise FilterError(
                f"Initial moment sequence is not positive definite "
                f"(failed pivot {check.failed_pivot})"
            )
        prediction, diagnostics = _refit(moments, settings)
        return FilterState(0, prediction, moments, diagnostics=diagnostics)

    moments = moment_vector(init, settings.order, settings.truncate_radius, settings.quadrature)
    return FilterState(0, init, moments)


def update(
    state: FilterState, y: float, system: SystemModel, settings: FilterSettings
) -> FilterState:
    """Condition the state's prediction on y_t and record the posterior moments."""
    step = system.at(state.t)
    posterior = measurement_update_moments(
        state.prediction, step.obs_noise, y, step.h, settings.order, settings.quadrature
    )
    diagnostics = {**state.diagnostics, "evidence": posterior.normalizer}
    return replace(state, posterior_moments=posterior.moments, diagnostics=diagnostics)


def predict(state: FilterState, system: SystemModel, settings: FilterSettings) -> FilterState:
    """Propagate posterior moments through the dynamics and refit the surrogate."""
    if state.posterior_moments is None:
        raise FilterError(f"State at t={state.t} has not been updated with an observation")
    step = system.at(state.t)
    noise = noise_moments(
        step.process_noise, settings.order, settings.truncate_radius, settings.quadrature
    )
    moments = time_update(state.posterior_moments, noise, step.f)
    check = is_positive_definite(hankel_from(moments))
    if not check:
        raise FilterError(
            f"Predicted moments at t={state.t + 1} are not positive definite "
            f"(min eigenvalue {check.min_eigenvalue:.3g})"
        )
    if step.f == 0.0 and not isinstance(step.process_noise, DiscreteNoise):
        return FilterState(state.t + 1, step.process_noise, moments)
    prediction, diagnostics = _refit(moments, settings)
    return FilterState(state.t + 1, prediction, moments, diagnostics=diagnostics)


def step(
    state: FilterState,
    y: float,
    system: SystemModel,
    settings: FilterSettings,
) -> FilterState:
    """One full filter step: measurement update, time update, refit.

    Returns the state at t+1.

    Raises:
        FilterStepError: Wrapping any failure, with the time index.
    """
    try:
        return predict(update(state, y, system, settings), system, settings)
    except FilterStepError:
        raise
    except Exception as e:
        raise FilterStepError(state.t, e) from e


@dataclass
class FilterRun:
    """States of a filter run and its summary record.

    states[t] is the state at time t, updated with y_t when t < len(observations);
    the last state holds the final prediction only.
    """

    states: list[FilterState]
    summary: dict[str, Any] = field(default_factory=dict)


def run(
    system: SystemModel,
    observations: Sequence[float],
    init: DensityModel | MomentSequence,
    settings: FilterSettings,
) -> FilterRun:
    """Fold step over the observations.

    Raises:
        FilterError: If there are more observations than the horizon.
        FilterStepError: If a step fails.
    """
    if len(observations) > system.horizon:
        raise FilterError(
            f"{len(observations)} observations exceed the horizon of {system.horizon}"
        )
    try:
        state = init_state(init, settings)
    except Exception as e:
        raise FilterStepError(0, e) from e

    states: list[FilterState] = []
    for y in observations:
        try:
            updated = update(state, y, system, settings)
            states.append(updated)
            state = predict(updated, system, settings)
        except Exception as e:
            raise FilterStepError(state.t, e) from e
    states.append(state)
    return FilterRun(
        states=states,
        summary={"steps": len(observations), "order": settings.order},
    )


def _draw(model: DensityModel | DiscreteNoise, rng: np.random.Generator) -> float:
    match model:
        case DiscreteNoise():
            return model.sample(rng)
        case Gaussian(mean=m, std=s):
            return float(rng.normal(m, s))
        case Laplace(location=m, scale=b):
            return float(rng.laplace(m, b))
        case StudentT(dof=nu, location=m, scale=s):
            return float(m + s * rng.standard_t(nu))
        case Cauchy(location=m, scale=s):
            return float(m + s * rng.standard_cauchy())
        case Mixture(weights=ws, components=cs):
            index = int(rng.choice(len(ws), p=np.asarray(ws)))
            return _draw(cs[index], rng)
    raise DensityError(f"Cannot simulate from {type(model).__name__}")


def simulate_observations(
    system: SystemModel,
    init: DensityModel,
    steps: int,
    seed: int,
) -> tuple[list[float], list[float]]:
    """Draw a state trajectory and its observations with a seeded generator.

    Returns:
        (states x_0..x_{steps-1}, observations y_0..y_{steps-1}).
    """
    if steps > system.horizon:
        raise FilterError(f"{steps} steps exceed the horizon of {system.horizon}")
    rng = np.random.default_rng(seed)
    x = _draw(init, rng)
    xs: list[float] = []
    ys: list[float] = []
    for t in range(steps):
        stage = system.at(t)
        xs.append(x)
        ys.append(stage.h * x + _draw(stage.obs_noise, rng))
        x = stage.f * x + _draw(stage.process_noise, rng)
    return xs, ys

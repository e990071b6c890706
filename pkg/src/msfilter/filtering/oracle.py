"""Ground-truth reference filters.

A dense uniform-grid (point-mass) Bayesian filter used only to check the
surrogate filter, plus the closed-form Kalman recursion for linear Gaussian
systems. Grids are trapezoid-normalised throughout.
"""

from __future__ import annotations

import math
import sys
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import trapezoid
from scipy.signal import fftconvolve

from msfilter.core.densities import (
    DensityModel,
    DiscreteNoise,
    MomentExistenceError,
    moment_vector,
    pdf,
    support_hint,
)
from msfilter.core.moments import (
    NORMALIZER_FLOOR,
    DegenerateObservationError,
    MomentSequence,
    Provenance,
    time_update,
)
from msfilter.core.quadrature import QuadratureConfig, integrate_interval
from msfilter.filtering.system import ProcessNoise, SystemModel, noise_moments

WINDOW_MASS_TOL = 1e-8


class OracleError(Exception):
    """Raised when the reference filter cannot represent a scenario."""


class WindowError(OracleError):
    """Raised when too much probability mass falls outside the grid window.

    Attributes:
        leak: The mass lost outside the window.
    """

    def __init__(self, message: str, leak: float) -> None:
        super().__init__(message)
        self.leak = leak


def _display_warning(message: str) -> None:
    """Display a warning message to stderr."""
    print(f"Warning: {message}", file=sys.stderr)


@dataclass(frozen=True, eq=False)
class GridDensity:
    """A density tabulated on a uniform grid over [lo, hi].

    values are renormalised on construction so that their trapezoid
    integral is 1; truncated_mass records probability known to lie outside.
    """

    lo: float
    hi: float
    values: NDArray[np.float64]
    truncated_mass: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise OracleError(f"Grid window must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise OracleError("A grid density needs at least two points")
        if not np.all(np.isfinite(values)):
            raise OracleError("Grid values must be finite")
        values = np.maximum(values, 0.0)
        mass = float(trapezoid(values, dx=(self.hi - self.lo) / (values.size - 1)))
        if not mass > 0:
            raise OracleError("Grid density has zero mass")
        object.__setattr__(self, "values", values / mass)

    @property
    def n_points(self) -> int:
        return int(self.values.size)

    @property
    def dx(self) -> float:
        return (self.hi - self.lo) / (self.n_points - 1)

    @property
    def xs(self) -> NDArray[np.float64]:
        return np.linspace(self.lo, self.hi, self.n_points)

    def __call__(self, x: NDArray[np.float64] | float) -> NDArray[np.float64]:
        """Linear interpolation, zero outside the window."""
        return np.interp(x, self.xs, self.values, left=0.0, right=0.0)

    def integral(self, weights: NDArray[np.float64]) -> float:
        return float(trapezoid(self.values * weights, dx=self.dx))


@dataclass(frozen=True)
class OracleSettings:
    """Grid filter settings.

    Attributes:
        n_points: Grid size.
        half_width: Window half-width in predicted standard deviations.
        leak_tol: Largest tolerated mass escaping the window in one time update.
        allow_truncation: Accept initial densities with mass outside the window.
    """

    n_points: int = 4001
    half_width: float = 12.0
    leak_tol: float = 1e-5
    allow_truncation: bool = False

    def __post_init__(self) -> None:
        if self.n_points < 3:
            raise OracleError("n_points must be at least 3")
        if not (self.half_width > 0 and self.leak_tol > 0):
            raise OracleError("half_width and leak_tol must be positive")


def to_grid(
    model: DensityModel,
    lo: float,
    hi: float,
    n_points: int = 4001,
    allow_truncation: bool = False,
    quadrature: QuadratureConfig | None = None,
) -> GridDensity:
    """Tabulate a density on [lo, hi] and renormalise.

    Raises:
        WindowError: If more than 1e-8 of the mass lies outside the window
            and truncation was not acknowledged.
    """

    def density(x: float) -> float:
        return float(pdf(model, x))

    outside = (
        integrate_interval(density, -math.inf, lo, quadrature).value
        + integrate_interval(density, hi, math.inf, quadrature).value
    )
    if outside > WINDOW_MASS_TOL and not allow_truncation:
        raise WindowError(
            f"{outside:.3g} of the mass lies outside [{lo:g}, {hi:g}]", leak=float(outside)
        )
    if outside > WINDOW_MASS_TOL:
        _display_warning(f"Grid window [{lo:g}, {hi:g}] truncates {outside:.3g} of the mass")
    xs = np.linspace(lo, hi, n_points)
    return GridDensity(lo, hi, pdf(model, xs), truncated_mass=float(outside))


def grid_measurement_update(
    g: GridDensity,
    noise: DensityModel,
    y: float,
    h: float,
) -> GridDensity:
    """Multiply by the likelihood noise(y - h*x) and renormalise.

    Raises:
        DegenerateObservationError: If the evidence integral is below 1e-300.
    """
    weighted = g.values * pdf(noise, y - h * g.xs)
    evidence = float(trapezoid(weighted, dx=g.dx))
    if not evidence >= NORMALIZER_FLOOR:
        raise DegenerateObservationError(
            f"Observation y={y:g} has likelihood {evidence:.3g} on the grid"
        )
    return GridDensity(g.lo, g.hi, weighted, g.truncated_mass)


def grid_time_update(
    g: GridDensity,
    noise: ProcessNoise,
    f: float,
    window: tuple[float, float] | None = None,
    n_points: int | None = None,
    leak_tol: float = 1e-5,
) -> GridDensity:
    """Density of f*x + eta on an output grid.

    For discrete noise the result is the exact mixture
    sum_i p_i * g((x - atom_i)/f) / |f|, evaluated by interpolation. For a
    continuous noise density the f-scaled density is convolved with the noise
    pdf using trapezoid weights.

    Args:
        g: Density of x.
        noise: Process noise.
        f: Dynamics coefficient.
        window: Output window; defaults to g's window.
        n_points: Output grid size; defaults to g's size.
        leak_tol: Largest tolerated mass falling outside the output window.

    Raises:
        OracleError: If f is zero and the noise is discrete.
        WindowError: If more than leak_tol of the mass leaves the window.
    """
    lo, hi = window if window is not None else (g.lo, g.hi)
    n = n_points or g.n_points
    xs = np.linspace(lo, hi, n)
    dx = (hi - lo) / (n - 1)

    if isinstance(noise, DiscreteNoise):
        if f == 0.0:
            raise OracleError("Zero dynamics with discrete noise has no density")
        values = np.zeros(n)
        for atom, p in zip(noise.atoms, noise.probabilities, strict=True):
            values += p * g((xs - atom) / f) / abs(f)
    elif f == 0.0:
        values = pdf(noise, xs)
    else:
        scaled = g(xs / f) / abs(f)
        weights = scaled * dx
        weights[0] *= 0.5
        weights[-1] *= 0.5
        offsets = np.arange(-(n - 1), n) * dx
        values = fftconvolve(weights, pdf(noise, offsets), mode="same")

    values = np.maximum(values, 0.0)
    leak = 1.0 - float(trapezoid(values, dx=dx))
    if leak > leak_tol:
        raise WindowError(f"Time update pushed {leak:.3g} of the mass outside the grid", leak)
    return GridDensity(lo, hi, values, g.truncated_mass)


def grid_moments(g: GridDensity, order: int) -> MomentSequence:
    """Trapezoid moments of a grid density; sigma_0 is 1 by construction."""
    xs = g.xs
    values = [g.integral(xs**k) for k in range(order + 1)]
    values[0] = 1.0
    return MomentSequence(tuple(values), Provenance.quadrature(g.dx**2))


def auto_window(moments: MomentSequence, half_width: float) -> tuple[float, float]:
    """Window centred at the mean, half_width standard deviations wide."""
    std = math.sqrt(max(moments.variance, 0.0))
    if not std > 0:
        raise OracleError("Cannot size a grid window for a zero-variance density")
    return moments.mean - half_width * std, moments.mean + half_width * std


@dataclass
class GridRun:
    """Predictions and posteriors of the grid filter, one per time index."""

    predictions: list[GridDensity] = field(default_factory=list)
    posteriors: list[GridDensity] = field(default_factory=list)


def initial_grid(
    init: DensityModel,
    settings: OracleSettings,
    quadrature: QuadratureConfig | None = None,
) -> GridDensity:
    """Tabulate the initial density on an automatically sized window."""
    try:
        window = auto_window(moment_vector(init, 2), settings.half_width)
    except MomentExistenceError:
        center, scale = support_hint(init)
        window = (center - settings.half_width * scale, center + settings.half_width * scale)
    return to_grid(
        init, window[0], window[1], settings.n_points, settings.allow_truncation, quadrature
    )


def _predicted_window(
    post: GridDensity,
    noise: ProcessNoise,
    f: float,
    settings: OracleSettings,
) -> tuple[float, float]:
    post2 = grid_moments(post, 2)
    try:
        pred2 = time_update(post2, noise_moments(noise, 2), f)
        return auto_window(pred2, settings.half_width)
    except MomentExistenceError:
        assert not isinstance(noise, DiscreteNoise)
        center, scale = support_hint(noise)
        mean = f * post2.mean + center
        spread = math.hypot(f * math.sqrt(max(post2.variance, 0.0)), scale)
        return mean - settings.half_width * spread, mean + settings.half_width * spread


def run_grid_filter(
    system: SystemModel,
    init: DensityModel | GridDensity,
    observations: Sequence[float],
    settings: OracleSettings | None = None,
    quadrature: QuadratureConfig | None = None,
) -> GridRun:
    """Run the point-mass filter over the observations.

    predictions[t] is the density of x_t given y_0..y_{t-1}; posteriors[t]
    additionally conditions on y_t. The window is re-centred at every
    prediction from its first two moments.

    Raises:
        OracleError: If the observations outrun the horizon.
        WindowError: If a time update leaks more than settings.leak_tol.
    """
    settings = settings or OracleSettings()
    if len(observations) > system.horizon:
        raise OracleError(
            f"{len(observations)} observations exceed the horizon of {system.horizon}"
        )
    pred = init if isinstance(init, GridDensity) else initial_grid(init, settings, quadrature)
    run = GridRun(predictions=[pred])
    for t, y in enumerate(observations):
        step = system.at(t)
        post = grid_measurement_update(pred, step.obs_noise, y, step.h)
        run.posteriors.append(post)
        window = _predicted_window(post, step.process_noise, step.f, settings)
        pred = grid_time_update(
            post,
            step.process_noise,
            step.f,
            window=window,
            n_points=settings.n_points,
            leak_tol=settings.leak_tol,
        )
        run.predictions.append(pred)
    return run


@dataclass
class KalmanTrack:
    """Kalman filter means and variances.

    pred_* have one more entry than post_*: the final prediction.
    """

    pred_means: list[float] = field(default_factory=list)
    pred_vars: list[float] = field(default_factory=list)
    post_means: list[float] = field(default_factory=list)
    post_vars: list[float] = field(default_factory=list)


def kalman_recursion(
    system: SystemModel,
    mean0: float,
    var0: float,
    observations: Sequence[float],
) -> KalmanTrack:
    """Scalar Kalman recursion using the noises' first two moments.

    For Gaussian noises this is the exact Bayesian filter; otherwise it is
    the best linear estimator.
    """
    track = KalmanTrack(pred_means=[mean0], pred_vars=[var0])
    m, p = mean0, var0
    for t, y in enumerate(observations):
        step = system.at(t)
        obs = moment_vector(step.obs_noise, 2)
        gain = p * step.h / (step.h * step.h * p + obs.variance)
        m = m + gain * (y - step.h * m - obs.mean)
        p = (1.0 - gain * step.h) * p
        track.post_means.append(m)
        track.post_vars.append(p)

        proc = noise_moments(step.process_noise, 2)
        m = step.f * m + proc.mean
        p = step.f * step.f * p + proc.variance
        track.pred_means.append(m)
        track.pred_vars.append(p)
    return track

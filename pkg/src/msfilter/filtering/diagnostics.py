"""Distances, entropies and the entropy-based error bound.

The total variation distance here is the supremum of the absolute
difference of the two cumulative distribution functions. The bound compares
a density with the maximum-entropy density sharing its moments: for an
entropy gap d, B = 3 * sqrt(-1 + sqrt(1 + 4d/9)) bounds the distance
between them, and the triangle inequality through the maximum-entropy
density bounds the distance between surrogate and truth.
"""

from __future__ import annotations

import math
import sys
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P
from numpy.typing import NDArray
from scipy.integrate import cumulative_trapezoid, trapezoid

from msfilter.core.densities import (
    DensityModel,
    ExpPoly,
    LambdaCoefficients,
    pdf,
    support_hint,
    tail_class,
)
from msfilter.core.moments import MomentSequence, hankel_from, is_positive_definite
from msfilter.core.quadrature import (
    DEFAULT_QUADRATURE,
    QuadratureConfig,
    integrate_interval,
    integrate_line,
    line_rule,
)
from msfilter.core.surrogate import DEFAULT_SOLVER, SolverConfig, basis_moments
from msfilter.filtering.oracle import GridDensity

ENTROPY_GAP_TOL = 1e-6
DENSITY_FLOOR = 1e-300
TV_WINDOW_SCALES = 20.0

Distribution = DensityModel | GridDensity


class DiagnosticsError(Exception):
    """Raised when a diagnostic cannot be computed."""


class BoundConsistencyError(DiagnosticsError):
    """Raised when a density has more entropy than the maximum-entropy density."""


class MaxEntError(DiagnosticsError):
    """Raised when the maximum-entropy fit fails.

    Attributes:
        objective_trace: Dual objective at every accepted iterate.
    """

    def __init__(self, message: str, objective_trace: Sequence[float] = ()) -> None:
        super().__init__(message)
        self.objective_trace = list(objective_trace)


def _display_warning(message: str) -> None:
    """Display a warning message to stderr."""
    print(f"Warning: {message}", file=sys.stderr)


def _window(p: Distribution) -> tuple[float, float]:
    if isinstance(p, GridDensity):
        return p.lo, p.hi
    center, scale = support_hint(p)
    return center - TV_WINDOW_SCALES * scale, center + TV_WINDOW_SCALES * scale


def _values(p: Distribution, xs: NDArray[np.float64]) -> NDArray[np.float64]:
    if isinstance(p, GridDensity):
        return p(xs)
    return pdf(p, xs)


def _mass_below(p: Distribution, x: float, quadrature: QuadratureConfig | None) -> float:
    if isinstance(p, GridDensity):
        return 0.0

    def density(t: float) -> float:
        return float(pdf(p, t))

    return float(integrate_interval(density, -math.inf, x, quadrature).value)


def total_variation(
    p: Distribution,
    q: Distribution,
    quadrature: QuadratureConfig | None = None,
    tol: float = 1e-4,
    initial_points: int = 2001,
    max_points: int = 2**18 + 1,
) -> float:
    """sup_x |F_p(x) - F_q(x)|, in [0, 1].

    CDFs are built by cumulative trapezoid over the union of both densities'
    windows, starting from the exact tail mass below the window. The grid is
    doubled until the supremum changes by less than tol.
    """
    lo = min(_window(p)[0], _window(q)[0])
    hi = max(_window(p)[1], _window(q)[1])
    below = _mass_below(p, lo, quadrature) - _mass_below(q, lo, quadrature)

    n = initial_points
    previous: float | None = None
    while True:
        xs = np.linspace(lo, hi, n)
        diff = cumulative_trapezoid(_values(p, xs) - _values(q, xs), xs, initial=0.0) + below
        current = float(np.max(np.abs(diff)))
        if previous is not None and abs(current - previous) < tol:
            break
        if 2 * n - 1 > max_points:
            _display_warning(f"Total variation did not settle within {n} grid points")
            break
        previous = current
        n = 2 * n - 1
    return min(max(current, 0.0), 1.0)


def _p_log_p(values: NDArray[np.float64]) -> NDArray[np.float64]:
    safe = np.where(values < DENSITY_FLOOR, 1.0, values)
    return np.where(values < DENSITY_FLOOR, 0.0, values * np.log(safe))


def shannon_entropy(p: Distribution, quadrature: QuadratureConfig | None = None) -> float:
    """-integral of p log p; values below 1e-300 contribute their limit 0."""
    if isinstance(p, GridDensity):
        return -float(trapezoid(_p_log_p(p.values), dx=p.dx))
    center, scale = support_hint(p)

    def integrand(x: float) -> float:
        return float(_p_log_p(pdf(p, x)))

    return -float(integrate_line(integrand, quadrature, center=center, scale=scale).value)


def kl_divergence(
    p: DensityModel,
    q: DensityModel,
    quadrature: QuadratureConfig | None = None,
) -> float:
    """integral of p log(p/q), clipped at zero from below."""
    center, scale = support_hint(p)

    def integrand(x: float) -> float:
        px = float(pdf(p, x))
        if px < DENSITY_FLOOR:
            return 0.0
        qx = max(float(pdf(q, x)), DENSITY_FLOOR)
        return px * (math.log(px) - math.log(qx))

    value = float(integrate_line(integrand, quadrature, center=center, scale=scale).value)
    return max(value, 0.0)


def fit_maxent(
    target: MomentSequence,
    config: SolverConfig | None = None,
    quadrature: QuadratureConfig | None = None,
) -> ExpPoly:
    """Maximum-entropy density exp(-sum_i lam_i x^i) with the target moments.

    Newton's method on the dual integral exp(-P(u)) du + sum_i lam_i tau_i,
    in standardised coordinates u = (x - mean)/std, started from the
    Gaussian with the target's mean and variance.

    Raises:
        MaxEntError: If the target is not positive definite or Newton fails.
    """
    config = config or DEFAULT_SOLVER
    quadrature = quadrature or DEFAULT_QUADRATURE
    order = target.order
    if order < 2 or order % 2 == 1:
        raise MaxEntError(f"Maximum entropy needs an even order of at least 2, got {order}")
    check = is_positive_definite(hankel_from(target))
    if not check:
        raise MaxEntError(
            f"Target Hankel matrix is not positive definite "
            f"(min eigenvalue {check.min_eigenvalue:.3g})"
        )

    center, spread = target.mean, math.sqrt(target.variance)
    tau = basis_moments(target.values, center, spread)
    u, w = line_rule(quadrature.fixed_nodes)
    vander = P.polyvander(u, order)

    def evaluate(
        lam: NDArray[np.float64],
    ) -> tuple[float, NDArray[np.float64], NDArray[np.float64]] | None:
        if lam[order] <= 0:
            return None
        with np.errstate(over="ignore"):
            weights = w * np.exp(-(vander @ lam))
        if not np.all(np.isfinite(weights)):
            return None
        dual = float(weights.sum() + lam @ tau)
        grad = tau - vander.T @ weights
        hess = vander.T @ (vander * weights[:, None])
        return dual, grad, hess

    lam = np.zeros(order + 1)
    lam[0] = 0.5 * math.log(2.0 * math.pi)
    lam[2] = 0.5
    if order > 2:
        lam[order] = config.init_eps

    current = evaluate(lam)
    assert current is not None
    trace: list[float] = []
    for _ in range(config.max_iters):
        dual, grad, hess = current
        trace.append(dual)
        if float(np.max(np.abs(grad))) <= config.grad_tol:
            break
        d = 1.0 / np.sqrt(np.diag(hess))
        try:
            direction = np.linalg.solve(hess * np.outer(d, d), -grad * d) * d
        except np.linalg.LinAlgError as e:
            raise MaxEntError(f"Singular maximum-entropy Hessian: {e}", trace) from e
        decrement = float(-grad @ direction)
        if decrement / 2.0 <= config.decrement_tol:
            break
        step = 1.0
        accepted = None
        for _ in range(config.max_halvings):
            candidate = lam + step * direction
            trial = evaluate(candidate)
            if trial is not None and trial[0] <= dual - config.armijo * step * decrement:
                accepted = (candidate, trial)
                break
            step *= config.backtrack
        if accepted is None:
            if decrement / 2.0 <= 1e-12 * max(1.0, abs(dual)):
                break
            raise MaxEntError("Maximum-entropy line search failed", trace)
        lam, current = accepted
    else:
        raise MaxEntError(f"No convergence within {config.max_iters} iterations", trace)

    coeffs = lam.copy()
    coeffs[0] += math.log(spread)
    density = ExpPoly(LambdaCoefficients(tuple(coeffs), center, spread))

    powers = np.arange(order + 1)

    def integrand(x: float) -> NDArray[np.float64]:
        return np.asarray(float(pdf(density, x)) * x**powers, dtype=float)

    achieved = np.asarray(
        integrate_line(integrand, quadrature, center=center, scale=spread).value, dtype=float
    )
    achieved_std = basis_moments(achieved, center, spread)
    residual = float(np.max(np.abs(achieved_std - tau) / np.maximum(1.0, np.abs(tau))))
    if residual > config.moment_tol:
        raise MaxEntError(
            f"Maximum-entropy moments miss the target by {residual:.3g}", trace
        )
    return density


def entropy_bound(gap: float) -> float:
    """3 * sqrt(-1 + sqrt(1 + 4*gap/9)) for a nonnegative entropy gap."""
    if gap < 0:
        raise DiagnosticsError(f"Entropy gap must be nonnegative, got {gap}")
    return 3.0 * math.sqrt(-1.0 + math.sqrt(1.0 + 4.0 * gap / 9.0))


@dataclass(frozen=True)
class BoundReport:
    """Entropies and the total variation bound they imply.

    Attributes:
        entropy_surrogate: H of the surrogate.
        entropy_maxent: H of the maximum-entropy density.
        entropy_truth: H of the true density, if given.
        bound_value: B(surrogate) + B(truth), or B(surrogate) alone.
        measured_tv: Measured distance between surrogate and truth, if given.
        surrogate_term: B(surrogate).
        truth_term: B(truth), if given.
        assumptions_hold: False when the truth has polynomial tails, so that
            its moments cannot all be matched and the bound is only indicative.
    """

    entropy_surrogate: float
    entropy_maxent: float
    bound_value: float
    surrogate_term: float
    entropy_truth: float | None = None
    truth_term: float | None = None
    measured_tv: float | None = None
    assumptions_hold: bool = True
    notes: list[str] = field(default_factory=list)

    def holds(self, slack: float = 1e-3) -> bool | None:
        """Whether measured_tv <= bound_value + slack; None without a measurement."""
        if self.measured_tv is None:
            return None
        return self.measured_tv <= self.bound_value + slack


def _gap(h_maxent: float, h_other: float, label: str, strict: bool, notes: list[str]) -> float:
    gap = h_maxent - h_other
    if gap < -ENTROPY_GAP_TOL:
        if strict:
            raise BoundConsistencyError(
                f"{label} entropy exceeds the maximum-entropy density's by {-gap:.3g}"
            )
        notes.append(f"{label} entropy exceeds the maximum-entropy density's by {-gap:.3g}")
    return max(gap, 0.0)


def tv_upper_bound(
    surrogate: DensityModel,
    maxent: DensityModel,
    truth: DensityModel | None = None,
    quadrature: QuadratureConfig | None = None,
    measure: bool = True,
) -> BoundReport:
    """Total variation bound from entropy gaps to the maximum-entropy density.

    Args:
        surrogate: The fitted density.
        maxent: Maximum-entropy density with the same moments.
        truth: Optional true density.
        quadrature: Quadrature settings.
        measure: Also measure TV(surrogate, truth) when truth is given.

    Raises:
        BoundConsistencyError: If a density that should share the maximum-entropy
            density's moments has more entropy than it.
    """
    notes: list[str] = []
    h_maxent = shannon_entropy(maxent, quadrature)
    h_surrogate = shannon_entropy(surrogate, quadrature)
    surrogate_term = entropy_bound(_gap(h_maxent, h_surrogate, "Surrogate", True, notes))
    if truth is None:
        return BoundReport(
            entropy_surrogate=h_surrogate,
            entropy_maxent=h_maxent,
            bound_value=surrogate_term,
            surrogate_term=surrogate_term,
        )

    assumptions_hold = tail_class(truth).kind != "polynomial"
    if not assumptions_hold:
        notes.append(f"Truth has {tail_class(truth)} tails; bound is indicative only")
    h_truth = shannon_entropy(truth, quadrature)
    truth_term = entropy_bound(_gap(h_maxent, h_truth, "Truth", assumptions_hold, notes))
    return BoundReport(
        entropy_surrogate=h_surrogate,
        entropy_maxent=h_maxent,
        bound_value=surrogate_term + truth_term,
        surrogate_term=surrogate_term,
        entropy_truth=h_truth,
        truth_term=truth_term,
        measured_tv=total_variation(surrogate, truth, quadrature) if measure else None,
        assumptions_hold=assumptions_hold,
        notes=notes,
    )


def moment_error_constants(
    noise: DensityModel,
    y: float,
    h: float,
    order: int,
    quadrature: QuadratureConfig | None = None,
) -> NDArray[np.float64]:
    """C_k = integral of |x|^k noise(y - h x) dx for k = 0..order.

    An error of at most e in the predicted density moves the unnormalised
    k-th posterior moment by at most C_k * e.
    """
    if h == 0.0:
        raise DiagnosticsError("Moment error constants need a nonzero observation gain")
    center, scale = support_hint(noise)
    powers = np.arange(order + 1)

    def integrand(x: float) -> NDArray[np.float64]:
        return np.asarray(float(pdf(noise, y - h * x)) * abs(x) ** powers, dtype=float)

    result = integrate_line(integrand, quadrature, center=(y - center) / h, scale=scale / abs(h))
    return np.asarray(result.value, dtype=float)


def moment_gap(moments: MomentSequence, reference: MomentSequence) -> float:
    """Largest relative gap max_k |m_k - r_k| / max(|r_k|, 1) over shared orders."""
    order = min(moments.order, reference.order)
    a = moments.as_array()[: order + 1]
    b = reference.as_array()[: order + 1]
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0)))

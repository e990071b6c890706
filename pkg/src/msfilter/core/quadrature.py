"""Numerical integration on the real line and on intervals.

Every integral over the real line in msfilter goes through this module.
Adaptive integration uses scipy's vectorised Gauss-Kronrod driver on a
compactified variable; the fixed Gauss-Legendre rule on the same variable
is used wherever an integral has to be a smooth, deterministic function of
its parameters (the Newton solvers).
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Literal

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import quad_vec
from scipy.special import roots_legendre

Strategy = Literal["transform", "truncate"]
VALID_STRATEGIES: frozenset[str] = frozenset({"transform", "truncate"})

# Integrand maps a scalar abscissa to a scalar or a 1-D array of values.
Integrand = Callable[[float], Any]


class QuadratureError(Exception):
    """Raised when an integral cannot be evaluated."""


class QuadratureConvergenceError(QuadratureError):
    """Raised when the subdivision budget runs out before the tolerance is met.

    Attributes:
        best_estimate: The integral value at the point the driver stopped.
        err_estimate: The driver's error estimate for best_estimate.
    """

    def __init__(self, message: str, best_estimate: Any, err_estimate: float) -> None:
        super().__init__(message)
        self.best_estimate = best_estimate
        self.err_estimate = err_estimate


class IntegrandError(QuadratureError):
    """Raised when the integrand returns NaN."""


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances and infinite-domain handling for adaptive integration.

    Attributes:
        rel_tol: Relative tolerance on the (max-norm of the) integral.
        abs_tol: Absolute tolerance.
        max_subdivisions: Subinterval budget of the adaptive driver.
        strategy: "transform" maps the line onto (-1, 1) with
            x = c + s*t/(1-t^2); "truncate" integrates over [-radius, radius].
        radius: Truncation radius, required for the "truncate" strategy.
        fixed_nodes: Node count of the fixed Gauss-Legendre line rule.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_subdivisions: int = 2000
    strategy: Strategy = "transform"
    radius: float | None = None
    fixed_nodes: int = 2001

    def __post_init__(self) -> None:
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise QuadratureError("Quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise QuadratureError("max_subdivisions must be a positive integer")
        if self.strategy not in VALID_STRATEGIES:
            raise QuadratureError(
                f"Unknown infinite-domain strategy '{self.strategy}'. "
                f"Valid options: {', '.join(sorted(VALID_STRATEGIES))}"
            )
        if self.strategy == "truncate" and (self.radius is None or not self.radius > 0):
            raise QuadratureError("Truncation strategy needs a positive radius")
        if self.fixed_nodes < 16:
            raise QuadratureError("fixed_nodes must be at least 16")


DEFAULT_QUADRATURE = QuadratureConfig()


@dataclass(frozen=True)
class QuadratureResult:
    """Integral value with the driver's error estimate.

    value is a float for scalar integrands and an array for vector ones.
    """

    value: Any
    err_estimate: float


def _guarded(f: Integrand) -> Integrand:
    def wrapped(x: float) -> Any:
        value = f(x)
        if np.any(np.isnan(value)):
            raise IntegrandError(f"Integrand returned NaN at x={x!r}")
        return value

    return wrapped


def _run(g: Integrand, a: float, b: float, config: QuadratureConfig) -> QuadratureResult:
    value, err, info = quad_vec(
        g,
        a,
        b,
        epsabs=config.abs_tol,
        epsrel=config.rel_tol,
        norm="max",
        limit=config.max_subdivisions,
        quadrature="gk21",
        full_output=True,
    )
    # status 2 is a roundoff stall; the estimate is as good as it gets
    if info.status == 1:
        raise QuadratureConvergenceError(
            f"Subdivision budget of {config.max_subdivisions} exhausted "
            f"(error estimate {float(err):.3g})",
            best_estimate=value,
            err_estimate=float(err),
        )
    if isinstance(value, np.ndarray) and value.ndim == 0:
        value = float(value)
    return QuadratureResult(value=value, err_estimate=float(err))


def integrate_line(
    f: Integrand,
    config: QuadratureConfig | None = None,
    center: float = 0.0,
    scale: float = 1.0,
) -> QuadratureResult:
    """Integrate f over the whole real line.

    Under the "transform" strategy the abscissa is x = center + scale*t/(1-t^2)
    for t in (-1, 1); center and scale should locate the bulk of the
    integrand, they do not change the integral.

    Args:
        f: Scalar or vector-valued integrand.
        config: Tolerances and strategy. Defaults to DEFAULT_QUADRATURE.
        center: Location of the integrand's bulk.
        scale: Width of the integrand's bulk.

    Returns:
        QuadratureResult with value and error estimate.

    Raises:
        QuadratureConvergenceError: If the subdivision budget is exhausted.
        IntegrandError: If f returns NaN.
    """
    config = config or DEFAULT_QUADRATURE
    if not (math.isfinite(center) and math.isfinite(scale) and scale > 0):
        raise QuadratureError(f"Invalid centring (center={center}, scale={scale})")
    f = _guarded(f)

    if config.strategy == "truncate":
        assert config.radius is not None
        return _run(f, -config.radius, config.radius, config)

    def transformed(t: float) -> Any:
        d = 1.0 - t * t
        x = center + scale * t / d
        jac = scale * (1.0 + t * t) / (d * d)
        return f(x) * jac

    return _run(transformed, -1.0, 1.0, config)


def integrate_interval(
    f: Integrand,
    a: float,
    b: float,
    config: QuadratureConfig | None = None,
) -> QuadratureResult:
    """Integrate f over [a, b], where either endpoint may be infinite.

    A half-line [a, inf) is mapped to t in [0, 1) by x = a + t/(1-t), and
    (-inf, b] likewise; the whole line is delegated to integrate_line.

    Raises:
        QuadratureError: If a >= b.
        QuadratureConvergenceError: If the subdivision budget is exhausted.
        IntegrandError: If f returns NaN.
    """
    config = config or DEFAULT_QUADRATURE
    if not a < b:
        raise QuadratureError(f"Interval must satisfy a < b, got [{a}, {b}]")
    if math.isinf(a) and math.isinf(b):
        return integrate_line(f, config)
    f = _guarded(f)

    if math.isinf(b):

        def upper(t: float) -> Any:
            d = 1.0 - t
            return f(a + t / d) / (d * d)

        return _run(upper, 0.0, 1.0, config)

    if math.isinf(a):

        def lower(t: float) -> Any:
            d = 1.0 - t
            return f(b - t / d) / (d * d)

        return _run(lower, 0.0, 1.0, config)

    return _run(f, a, b, config)


@lru_cache(maxsize=16)
def _legendre(n: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    t, w = roots_legendre(n)
    return np.asarray(t, dtype=float), np.asarray(w, dtype=float)


def line_rule(
    n_nodes: int,
    center: float = 0.0,
    scale: float = 1.0,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Fixed Gauss-Legendre rule for the whole real line.

    Legendre nodes on (-1, 1) are pushed through x = center + scale*t/(1-t^2)
    and the weights absorb the Jacobian, so sum(w * g(x)) approximates the
    integral of g. The rule is exact for no polynomial; it is accurate for
    integrands that decay at least like x^-2.
    """
    t, wt = _legendre(n_nodes)
    d = 1.0 - t * t
    x = center + scale * t / d
    w = wt * scale * (1.0 + t * t) / (d * d)
    return x, w

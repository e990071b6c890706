"""Rational density surrogates fitted to power moments.

Given a prior density theta and a target moment sequence sigma_0..sigma_2n
with a positive definite Hankel matrix, there is exactly one density of the
form theta/q, q a polynomial of degree 2n that is positive on the real line,
whose first 2n moments equal the target. Its coefficients minimise the
convex functional

    J(lam) = sum_k lam_k * sigma_k - integral of theta(x) * log q(x) dx

over positive q. The solver below runs damped Newton on J with a
positivity-certifying, fraction-to-boundary line search, following a path
of moment sequences from an interior starting point to the target.

J and its derivatives are evaluated on a fixed Gauss-Legendre rule over the
compactified line, which makes them smooth deterministic functions of the
coefficients. The moments of the returned density are then re-checked with
adaptive quadrature.
"""

from __future__ import annotations

import math
import sys
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.polynomial import polynomial as P
from numpy.typing import NDArray

from msfilter.core.densities import (
    DensityModel,
    LambdaCoefficients,
    RationalSurrogate,
    as_coefficients,
    certify_positive,
    pdf,
)
from msfilter.core.moments import (
    MomentSequence,
    Provenance,
    hankel_from,
    is_positive_definite,
)
from msfilter.core.quadrature import (
    DEFAULT_QUADRATURE,
    QuadratureConfig,
    integrate_line,
    line_rule,
)


class SurrogateError(Exception):
    """Raised when a surrogate problem is malformed."""


class SurrogateDomainError(SurrogateError):
    """Raised when the functional is evaluated at a non-positive denominator."""


class NonConvergenceError(SurrogateError):
    """Raised when Newton's method does not reach the requested accuracy.

    Attributes:
        objective_trace: Objective values at every accepted iterate.
        iterations: Number of Newton iterations performed.
        residual: Relative moment residual, when it was computed.
    """

    def __init__(
        self,
        message: str,
        objective_trace: Sequence[float] = (),
        iterations: int = 0,
        residual: float | None = None,
    ) -> None:
        super().__init__(message)
        self.objective_trace = list(objective_trace)
        self.iterations = iterations
        self.residual = residual


def _display_warning(message: str) -> None:
    """Display a warning message to stderr."""
    print(f"Warning: {message}", file=sys.stderr)


def basis_moments(values: Sequence[float], center: float, scale: float) -> NDArray[np.float64]:
    """E[((x - center) / scale)^k] from raw moments E[x^j]."""
    out = np.empty(len(values))
    for k in range(len(values)):
        out[k] = math.fsum(
            math.comb(k, j) * values[j] * (-center) ** (k - j) for j in range(k + 1)
        ) / scale**k
    return out


@dataclass(frozen=True)
class SurrogateProblem:
    """Fit theta/q to a target moment sequence.

    Raises:
        SurrogateError: If the target has odd or zero order or its Hankel
            matrix is not positive definite.
    """

    prior: DensityModel
    target: MomentSequence

    def __post_init__(self) -> None:
        if self.target.order < 2:
            raise SurrogateError("Surrogate fitting needs a target of order at least 2")
        check = is_positive_definite(hankel_from(self.target))
        if not check:
            raise SurrogateError(
                f"Target Hankel matrix is not positive definite "
                f"(min eigenvalue {check.min_eigenvalue:.3g}, "
                f"failed pivot {check.failed_pivot})"
            )

    @property
    def order(self) -> int:
        return self.target.order

    @property
    def center(self) -> float:
        return self.target.mean

    @property
    def spread(self) -> float:
        return math.sqrt(self.target.variance)


@dataclass(frozen=True)
class SolverConfig:
    """Newton solver settings.

    Attributes:
        grad_tol: Stop when max |gradient| falls below this.
        max_iters: Newton iteration budget.
        backtrack: Step shrink factor of the line search.
        max_halvings: Line-search budget per iteration.
        init_eps: Leading coefficient of the maximum-entropy starting exponent.
        jitter: First diagonal jitter tried when the Hessian will not factorise.
        decrement_tol: Stop when half the squared Newton decrement falls below this.
        armijo: Sufficient-decrease fraction of the line search.
        moment_tol: Largest accepted relative moment residual.
        standardize: Work in u = (x - mean)/std rather than in x.
        start_lead: Leading coefficient a of the starting polynomial 1 + a*u^2n.
        boundary_fraction: A step may cover at most this fraction of the way
            to the boundary of the positive cone.
        stage_tol: Gradient tolerance of the intermediate moment-path stages.
        min_path_step: Smallest moment-path increment tried before giving up.
    """

    grad_tol: float = 1e-9
    max_iters: int = 200
    backtrack: float = 0.5
    max_halvings: int = 60
    init_eps: float = 1e-6
    jitter: float = 1e-12
    decrement_tol: float = 1e-20
    armijo: float = 1e-4
    moment_tol: float = 1e-6
    standardize: bool = True
    start_lead: float = 1.0
    boundary_fraction: float = 0.99
    stage_tol: float = 1e-7
    min_path_step: float = 1e-4

    def __post_init__(self) -> None:
        for name in (
            "grad_tol",
            "init_eps",
            "jitter",
            "decrement_tol",
            "moment_tol",
            "start_lead",
            "stage_tol",
        ):
            if not getattr(self, name) > 0:
                raise SurrogateError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise SurrogateError("backtrack must lie in (0, 1)")
        if not 0 < self.armijo < 0.5:
            raise SurrogateError("armijo must lie in (0, 0.5)")
        if not 0 < self.boundary_fraction < 1:
            raise SurrogateError("boundary_fraction must lie in (0, 1)")
        if not 0 < self.min_path_step <= 1:
            raise SurrogateError("min_path_step must lie in (0, 1]")
        if self.max_iters < 1 or self.max_halvings < 1:
            raise SurrogateError("Iteration budgets must be positive")


DEFAULT_SOLVER = SolverConfig()


@dataclass(frozen=True)
class _Evaluation:
    objective: float
    gradient: NDArray[np.float64]
    hessian: NDArray[np.float64]


class _DualFunctional:
    """J, its gradient and Hessian on a fixed line rule, in the basis of lam."""

    def __init__(
        self,
        problem: SurrogateProblem,
        basis_center: float,
        basis_scale: float,
        n_nodes: int,
    ) -> None:
        x, w = line_rule(n_nodes, problem.center, problem.spread)
        theta_w = pdf(problem.prior, x) * w
        keep = theta_w > 0
        u = (x[keep] - basis_center) / basis_scale
        self.theta_w = theta_w[keep]
        self.vander = P.polyvander(u, problem.order)
        self.target = basis_moments(problem.target.values, basis_center, basis_scale)

    def moments(self, lam: NDArray[np.float64]) -> NDArray[np.float64]:
        """Basis moments of theta/q on the rule."""
        return np.asarray(self.vander.T @ (self.theta_w / (self.vander @ lam)), dtype=float)

    def evaluate(
        self,
        lam: NDArray[np.float64],
        target: NDArray[np.float64] | None = None,
        derivatives: bool = True,
    ) -> _Evaluation | None:
        """J at lam against target (the problem's own moments by default).

        None when q is not positive at every node.
        """
        sigma = self.target if target is None else target
        q = self.vander @ lam
        if not np.all(q > 0):
            return None
        objective = float(lam @ sigma - self.theta_w @ np.log(q))
        if not derivatives:
            return _Evaluation(objective, np.empty(0), np.empty((0, 0)))
        r = self.theta_w / q
        gradient = sigma - self.vander.T @ r
        hessian = self.vander.T @ (self.vander * (r / q)[:, None])
        return _Evaluation(objective, gradient, hessian)


def _functional(
    problem: SurrogateProblem,
    lam: LambdaCoefficients,
    quadrature: QuadratureConfig | None,
) -> _DualFunctional:
    if len(lam.coeffs) != problem.order + 1:
        raise SurrogateError(
            f"Expected {problem.order + 1} coefficients, got {len(lam.coeffs)}"
        )
    cert = certify_positive(lam)
    if not cert:
        raise SurrogateDomainError(f"q is not positive on the real line (q({cert.witness}) <= 0)")
    n_nodes = (quadrature or DEFAULT_QUADRATURE).fixed_nodes
    return _DualFunctional(problem, lam.center, lam.scale, n_nodes)


def _evaluate(
    problem: SurrogateProblem,
    lam: LambdaCoefficients | Sequence[float],
    quadrature: QuadratureConfig | None,
) -> _Evaluation:
    lam = as_coefficients(lam)
    ev = _functional(problem, lam, quadrature).evaluate(lam.as_array())
    if ev is None:
        raise SurrogateDomainError("q underflows to zero on the quadrature rule")
    return ev


def objective(
    problem: SurrogateProblem,
    lam: LambdaCoefficients | Sequence[float],
    quadrature: QuadratureConfig | None = None,
) -> float:
    """J(lam) = sum_k lam_k sigma_k - integral of theta log q.

    Moments are taken in the basis of lam, so a LambdaCoefficients with a
    shifted basis is evaluated against the correspondingly shifted moments.

    Raises:
        SurrogateDomainError: If q is not positive.
    """
    return _evaluate(problem, lam, quadrature).objective


def gradient(
    problem: SurrogateProblem,
    lam: LambdaCoefficients | Sequence[float],
    quadrature: QuadratureConfig | None = None,
) -> NDArray[np.float64]:
    """g_k = sigma_k - integral of u^k theta/q."""
    return _evaluate(problem, lam, quadrature).gradient


def hessian(
    problem: SurrogateProblem,
    lam: LambdaCoefficients | Sequence[float],
    quadrature: QuadratureConfig | None = None,
) -> NDArray[np.float64]:
    """H_jk = integral of u^(j+k) theta/q^2."""
    return _evaluate(problem, lam, quadrature).hessian


@dataclass(frozen=True)
class SurrogateResult:
    """Outcome of a successful solve.

    Attributes:
        lambda_hat: Optimal denominator coefficients (in the solver basis).
        density: The renormalised surrogate theta/q.
        achieved_moments: Moments of density, by adaptive quadrature.
        residual: Largest relative moment error before renormalisation,
            measured in standardised coordinates.
        iterations: Newton iterations of the final moment-path stage.
        objective_trace: J at every accepted iterate of the final stage,
            strictly decreasing.
        hessian_min_eigenvalues: Smallest eigenvalue of the unit-diagonal
            scaled Hessian at every accepted iterate.
        path_steps: Moment-path stages solved, 1 when the target was reached directly.
    """

    lambda_hat: LambdaCoefficients
    density: RationalSurrogate
    achieved_moments: MomentSequence
    residual: float
    iterations: int
    objective_trace: list[float] = field(default_factory=list)
    hessian_min_eigenvalues: list[float] = field(default_factory=list)
    path_steps: int = 1


def _newton_direction(
    H: NDArray[np.float64],
    g: NDArray[np.float64],
    jitter: float,
) -> tuple[NDArray[np.float64], float, bool]:
    """Solve H d = -g with unit-diagonal scaling and jitter on failure.

    Returns the direction, the smallest eigenvalue of the scaled Hessian and
    whether jitter was needed.
    """
    d = 1.0 / np.sqrt(np.diag(H))
    scaled = H * np.outer(d, d)
    min_eig = float(np.linalg.eigvalsh(scaled)[0])
    identity = np.eye(len(g))
    shift = 0.0
    for _ in range(12):
        try:
            factor = scipy.linalg.cho_factor(scaled + shift * identity)
        except np.linalg.LinAlgError:
            shift = jitter if shift == 0.0 else shift * 10.0
            continue
        step = scipy.linalg.cho_solve(factor, -g * d) * d
        return step, min_eig, shift > 0.0
    raise np.linalg.LinAlgError("Hessian is not positive definite even with jitter")


def achieved_moments(
    density: RationalSurrogate,
    order: int,
    quadrature: QuadratureConfig | None = None,
) -> tuple[NDArray[np.float64], float]:
    """Unnormalised moments integral of x^k density(x), k = 0..order, with error estimate."""
    center, scale = density.hint if density.hint is not None else (0.0, 1.0)
    powers = np.arange(order + 1)

    def integrand(x: float) -> NDArray[np.float64]:
        return np.asarray(float(pdf(density, x)) * x**powers, dtype=float)

    result = integrate_line(integrand, quadrature, center=center, scale=scale)
    return np.asarray(result.value, dtype=float), result.err_estimate


@dataclass
class _Stage:
    """A converged Newton run against one point of the moment path."""

    lam: NDArray[np.float64]
    iterations: int
    trace: list[float]
    min_eigs: list[float]
    jittered: bool


def _newton(
    functional: _DualFunctional,
    lam: NDArray[np.float64],
    target: NDArray[np.float64],
    tol: float,
    basis: tuple[float, float],
    config: SolverConfig,
) -> _Stage:
    """Damped Newton on J against target, starting from a positive lam.

    A step is accepted only if the point it aims at, stretched by
    1/boundary_fraction, is still a positive polynomial, and J decreases
    by the Armijo fraction.

    Raises:
        NonConvergenceError: If the budget or the line search is exhausted.
    """
    current = functional.evaluate(lam, target)
    if current is None:
        raise NonConvergenceError("Starting polynomial underflows on the quadrature rule")

    trace: list[float] = []
    min_eigs: list[float] = []
    jittered = False

    for iterations in range(1, config.max_iters + 1):
        trace.append(current.objective)
        if float(np.max(np.abs(current.gradient))) <= tol:
            return _Stage(lam, iterations, trace, min_eigs, jittered)
        try:
            direction, min_eig, used_jitter = _newton_direction(
                current.hessian, current.gradient, config.jitter
            )
        except np.linalg.LinAlgError as e:
            raise NonConvergenceError(str(e), trace, iterations) from e
        min_eigs.append(min_eig)
        jittered = jittered or used_jitter

        decrement = float(-current.gradient @ direction)
        if decrement / 2.0 <= config.decrement_tol:
            return _Stage(lam, iterations, trace, min_eigs, jittered)

        step = 1.0
        accepted = None
        for _ in range(config.max_halvings):
            reach = lam + (step / config.boundary_fraction) * direction
            if certify_positive(LambdaCoefficients(tuple(reach), *basis)):
                candidate = lam + step * direction
                trial = functional.evaluate(candidate, target)
                if (
                    trial is not None
                    and trial.objective < current.objective
                    and trial.objective <= current.objective - config.armijo * step * decrement
                ):
                    accepted = (candidate, trial)
                    break
            step *= config.backtrack

        if accepted is None:
            # J is flat to working precision along the Newton direction
            if decrement / 2.0 <= 1e-12 * max(1.0, abs(current.objective)):
                return _Stage(lam, iterations, trace, min_eigs, jittered)
            raise NonConvergenceError(
                f"Line search failed after {config.max_halvings} halvings "
                f"(Newton decrement {decrement:.3g})",
                trace,
                iterations,
            )
        lam, current = accepted

    raise NonConvergenceError(
        f"No convergence within {config.max_iters} iterations "
        f"(max |gradient| {float(np.max(np.abs(current.gradient))):.3g})",
        trace,
        config.max_iters,
    )


def _path_start(
    functional: _DualFunctional, order: int, config: SolverConfig
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """The start m0*(1 + a*u^2n) and its own moments, which it matches exactly.

    m0 normalises the start to unit mass on the rule.
    """
    shape = np.zeros(order + 1)
    shape[0] = 1.0
    shape[order] = config.start_lead
    lam = shape * float(np.sum(functional.theta_w / (functional.vander @ shape)))
    return lam, functional.moments(lam)


def solve(
    problem: SurrogateProblem,
    config: SolverConfig | None = None,
    quadrature: QuadratureConfig | None = None,
) -> SurrogateResult:
    """Fit the rational surrogate theta/q to the problem's target moments.

    Newton starts from q0 = m0*(1 + a*u^2n), well inside the positive cone,
    and follows the moment path (1 - t)*sigma(q0) + t*sigma from t = 0 to 1.
    Every point of the path has a positive definite Hankel matrix. The path
    is taken in one stage when possible; a stage that fails is retried with
    half the increment, and the increment doubles again after a success.

    Args:
        problem: Prior and target moments.
        config: Newton settings. Defaults to DEFAULT_SOLVER.
        quadrature: Quadrature settings for the fixed rule and the final check.

    Returns:
        SurrogateResult with the optimal coefficients and the renormalised density.

    Raises:
        NonConvergenceError: If the moment path stalls, or the achieved
            moments miss the target by more than moment_tol.
    """
    config = config or DEFAULT_SOLVER
    quadrature = quadrature or DEFAULT_QUADRATURE
    order = problem.order
    center, spread = problem.center, problem.spread
    basis = (center, spread) if config.standardize else (0.0, 1.0)

    functional = _DualFunctional(problem, basis[0], basis[1], quadrature.fixed_nodes)
    lam, start = _path_start(functional, order, config)
    target = functional.target

    t, dt = 0.0, 1.0
    path_steps = 0
    while True:
        t_next = min(1.0, t + dt)
        final = t_next >= 1.0
        sigma = (1.0 - t_next) * start + t_next * target
        try:
            stage = _newton(
                functional,
                lam,
                sigma,
                config.grad_tol if final else config.stage_tol,
                basis,
                config,
            )
        except NonConvergenceError as e:
            dt /= 2.0
            if dt < config.min_path_step:
                raise NonConvergenceError(
                    f"Moment path stalled at t={t:.4g}: {e}", e.objective_trace, e.iterations
                ) from e
            continue
        lam, t = stage.lam, t_next
        path_steps += 1
        if final:
            break
        dt = min(2.0 * dt, 1.0)

    if stage.jittered:
        _display_warning("Hessian needed diagonal jitter during the surrogate solve")

    lambda_hat = LambdaCoefficients(tuple(lam), *basis)
    raw = RationalSurrogate(problem.prior, lambda_hat, 1.0, hint=(center, spread))
    values, err = achieved_moments(raw, order, quadrature)

    achieved_std = basis_moments(values, center, spread)
    target_std = basis_moments(problem.target.values, center, spread)
    residual = float(
        np.max(np.abs(achieved_std - target_std) / np.maximum(1.0, np.abs(target_std)))
    )
    if residual > config.moment_tol:
        raise NonConvergenceError(
            f"Achieved moments miss the target by {residual:.3g} (tolerance {config.moment_tol:g})",
            stage.trace,
            stage.iterations,
            residual,
        )

    mass = float(values[0])
    density = RationalSurrogate(problem.prior, lambda_hat, mass, hint=(center, spread))
    normalized = values / mass
    normalized[0] = 1.0
    return SurrogateResult(
        lambda_hat=lambda_hat,
        density=density,
        achieved_moments=MomentSequence(tuple(normalized), Provenance.quadrature(err / mass)),
        residual=residual,
        iterations=stage.iterations,
        objective_trace=stage.trace,
        hessian_min_eigenvalues=stage.min_eigs,
        path_steps=path_steps,
    )

"""Unit tests for the rational surrogate solver.

Feature: msfilter
Tests positivity certification, the dual functional and its derivatives,
and the damped Newton solve.
"""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from msfilter.core.densities import (
    Gaussian,
    LambdaCoefficients,
    Laplace,
    Mixture,
    moment_vector,
    pdf,
)
from msfilter.core.moments import MomentSequence
from msfilter.core.surrogate import (
    NonConvergenceError,
    SolverConfig,
    SurrogateDomainError,
    SurrogateError,
    SurrogateProblem,
    basis_moments,
    certify_positive,
    gradient,
    hessian,
    objective,
    solve,
)


@pytest.fixture
def shifted_problem() -> SurrogateProblem:
    """N(0, 2) prior against the order-4 moments of N(0.3, 1)."""
    return SurrogateProblem(Gaussian(0.0, 2.0), moment_vector(Gaussian(0.3, 1.0), 4))


LAM = (1.0, 0.1, 0.2, 0.0, 0.05)
BIMODAL = Mixture((0.3, 0.7), (Gaussian(2.0, 1.0), Gaussian(-2.0, 1.0)))
GAUSS_LAPLACE = Mixture((0.5, 0.5), (Gaussian(2.0, 1.0), Laplace(-2.0, 1.0)))


class TestCertifyPositive:
    """Tests for certify_positive."""

    @pytest.mark.parametrize(
        "coeffs",
        [(2.0,), (1.0, 0.0, 1.0), (1.0, 0.1, 0.2, 0.0, 0.05), (1.0, 0.0, 0.0, 0.0, 1e-6)],
    )
    def test_positive_polynomials(self, coeffs: tuple[float, ...]) -> None:
        assert certify_positive(coeffs)

    @pytest.mark.parametrize(
        "coeffs",
        [(-1.0,), (1.0, 1.0), (1.0, 0.0, -1.0), (1.0, -2.0, 1.0), (0.0, 0.0, 1.0)],
    )
    def test_polynomials_with_real_roots_or_bad_lead(self, coeffs: tuple[float, ...]) -> None:
        cert = certify_positive(coeffs)
        assert not cert
        assert cert.witness is not None
        assert np.polynomial.polynomial.polyval(cert.witness, coeffs) <= 0.0

    def test_double_root_witness(self) -> None:
        """(x - 1)^2 touches zero at x = 1."""
        cert = certify_positive((1.0, -2.0, 1.0))
        assert cert.witness == pytest.approx(1.0, abs=1e-6)

    def test_witness_is_reported_in_x(self) -> None:
        """A root at u = 0 of a shifted basis is reported at x = center."""
        cert = certify_positive(LambdaCoefficients((0.0, 0.0, 1.0), center=3.0, scale=2.0))
        assert not cert
        assert cert.witness == pytest.approx(3.0, abs=1e-9)


class TestBasisMoments:
    """Tests for basis_moments."""

    def test_standardising_a_gaussian(self) -> None:
        """N(1, 4) standardises to mean 0, variance 1."""
        assert_allclose(basis_moments((1.0, 1.0, 5.0), 1.0, 2.0), (1.0, 0.0, 1.0))

    def test_identity_basis(self) -> None:
        values = moment_vector(Gaussian(0.7, 1.3), 6).values
        assert_allclose(basis_moments(values, 0.0, 1.0), values)


class TestSurrogateProblem:
    """Tests for SurrogateProblem validation."""

    def test_order_zero_target_raises(self) -> None:
        with pytest.raises(SurrogateError):
            SurrogateProblem(Gaussian(0.0, 1.0), MomentSequence((1.0,)))

    def test_singular_target_raises(self) -> None:
        with pytest.raises(SurrogateError, match="not positive definite"):
            SurrogateProblem(Gaussian(0.0, 1.0), MomentSequence((1.0, 0.0, 1.0, 0.0, 1.0)))

    def test_standardisation_properties(self, shifted_problem: SurrogateProblem) -> None:
        assert shifted_problem.order == 4
        assert shifted_problem.center == pytest.approx(0.3)
        assert shifted_problem.spread == pytest.approx(1.0)


class TestFunctional:
    """J, its gradient and Hessian agree with finite differences."""

    def test_gradient_matches_finite_differences(self, shifted_problem: SurrogateProblem) -> None:
        h = 1e-6
        numeric = np.empty(5)
        for k in range(5):
            up = np.array(LAM)
            down = np.array(LAM)
            up[k] += h
            down[k] -= h
            numeric[k] = (
                objective(shifted_problem, tuple(up)) - objective(shifted_problem, tuple(down))
            ) / (2 * h)
        assert_allclose(gradient(shifted_problem, LAM), numeric, rtol=1e-5, atol=1e-6)

    def test_hessian_matches_finite_differences(self, shifted_problem: SurrogateProblem) -> None:
        h = 1e-6
        numeric = np.empty((5, 5))
        for k in range(5):
            up = np.array(LAM)
            down = np.array(LAM)
            up[k] += h
            down[k] -= h
            numeric[:, k] = (
                gradient(shifted_problem, tuple(up)) - gradient(shifted_problem, tuple(down))
            ) / (2 * h)
        H = hessian(shifted_problem, LAM)
        assert_allclose(H, H.T)
        assert_allclose(H, numeric, rtol=1e-5, atol=1e-5 * float(np.max(np.abs(H))))

    def test_hessian_is_positive_definite(self, shifted_problem: SurrogateProblem) -> None:
        assert np.linalg.eigvalsh(hessian(shifted_problem, LAM))[0] > 0

    def test_nonpositive_denominator_raises(self, shifted_problem: SurrogateProblem) -> None:
        with pytest.raises(SurrogateDomainError):
            objective(shifted_problem, (1.0, 0.0, 0.0, 0.0, -1.0))

    def test_wrong_coefficient_count_raises(self, shifted_problem: SurrogateProblem) -> None:
        with pytest.raises(SurrogateError, match="Expected 5 coefficients"):
            gradient(shifted_problem, (1.0, 0.0, 1.0))


class TestSolverConfig:
    """Tests for SolverConfig validation."""

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"grad_tol": 0.0},
            {"backtrack": 1.0},
            {"armijo": 0.6},
            {"max_iters": 0},
            {"max_halvings": 0},
            {"moment_tol": -1.0},
            {"start_lead": 0.0},
            {"boundary_fraction": 1.0},
            {"stage_tol": 0.0},
            {"min_path_step": 0.0},
        ],
    )
    def test_invalid_settings_raise(self, kwargs: dict[str, object]) -> None:
        with pytest.raises(SurrogateError):
            SolverConfig(**kwargs)  # type: ignore[arg-type]

    def test_standardisation_is_on_by_default(self) -> None:
        assert SolverConfig().standardize
        assert SolverConfig().boundary_fraction == 0.99


class TestSolve:
    """Tests for the Newton solve."""

    def test_prior_equal_to_target_gives_unit_denominator(self) -> None:
        """When theta already has the target moments, q = 1."""
        problem = SurrogateProblem(Gaussian(0.0, 1.0), moment_vector(Gaussian(0.0, 1.0), 4))
        result = solve(problem)
        assert_allclose(result.lambda_hat.coeffs, (1.0, 0.0, 0.0, 0.0, 0.0), atol=1e-6)
        xs = np.linspace(-6.0, 6.0, 121)
        assert_allclose(pdf(result.density, xs), stats.norm.pdf(xs), atol=1e-7)

    def test_moments_are_matched(self, shifted_problem: SurrogateProblem) -> None:
        result = solve(shifted_problem)
        assert result.residual <= 1e-6
        assert_allclose(
            result.achieved_moments.values,
            shifted_problem.target.values,
            rtol=1e-6,
            atol=1e-6,
        )
        assert certify_positive(result.lambda_hat)

    def test_objective_trace_decreases(self, shifted_problem: SurrogateProblem) -> None:
        result = solve(shifted_problem)
        assert len(result.objective_trace) == result.iterations
        assert np.all(np.diff(result.objective_trace) < 0)
        assert all(e > 0 for e in result.hessian_min_eigenvalues)

    def test_iteration_budget_exhausted(self, shifted_problem: SurrogateProblem) -> None:
        with pytest.raises(NonConvergenceError, match="Moment path stalled") as exc_info:
            solve(shifted_problem, SolverConfig(max_iters=1))
        assert exc_info.value.iterations == 1
        assert len(exc_info.value.objective_trace) == 1

    def test_standardised_high_order_fit(self) -> None:
        """An order-8 fit to a bimodal mixture runs in standardised coordinates."""
        target = moment_vector(BIMODAL, 8)
        problem = SurrogateProblem(Gaussian(-0.8, 3.0), target)
        result = solve(problem)
        assert result.lambda_hat.center == pytest.approx(target.mean)
        assert result.lambda_hat.scale == pytest.approx(np.sqrt(target.variance))
        assert result.residual <= 1e-6
        assert result.density.normalizer > 0

    def test_plain_basis_when_not_standardising(self, shifted_problem: SurrogateProblem) -> None:
        result = solve(shifted_problem, SolverConfig(standardize=False))
        assert result.lambda_hat.center == 0.0
        assert result.lambda_hat.scale == 1.0
        assert result.residual <= 1e-6

    def test_path_steps_are_reported(self, shifted_problem: SurrogateProblem) -> None:
        assert solve(shifted_problem).path_steps >= 1


class TestBundledTargets:
    """The bimodal and Gaussian-Laplace targets fit at every supported order."""

    @pytest.mark.parametrize("order", [4, 6, 8])
    def test_bimodal_mixture(self, order: int) -> None:
        problem = SurrogateProblem(Gaussian(-0.8, 3.0), moment_vector(BIMODAL, order))
        result = solve(problem)
        assert result.residual <= 1e-6
        assert certify_positive(result.lambda_hat)

    @pytest.mark.parametrize("order", [4, 6, 8])
    def test_gaussian_and_laplace_modes(self, order: int) -> None:
        problem = SurrogateProblem(Gaussian(0.0, 5.0), moment_vector(GAUSS_LAPLACE, order))
        result = solve(problem)
        assert result.residual <= 1e-6
        assert certify_positive(result.lambda_hat)

    @pytest.mark.parametrize("order", [4, 6])
    def test_unstandardised_bimodal_fit(self, order: int) -> None:
        """The plain power basis reaches the same fit."""
        problem = SurrogateProblem(Gaussian(-0.8, 3.0), moment_vector(BIMODAL, order))
        plain = solve(problem, SolverConfig(standardize=False))
        standard = solve(problem)
        assert plain.residual <= 1e-6
        xs = np.linspace(-6.0, 6.0, 61)
        assert_allclose(pdf(plain.density, xs), pdf(standard.density, xs), atol=1e-5)

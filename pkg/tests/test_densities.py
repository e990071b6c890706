"""Unit tests for the analytic density zoo.

Feature: msfilter
Tests construction invariants, evaluation, tail classification, raw
moments and moment vectors, including truncated heavy-tail moments.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from msfilter.core.densities import (
    Cauchy,
    DensityDomainError,
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
    SUB_GAUSSIAN,
    StudentT,
    eval_pdf,
    moment_vector,
    pdf,
    raw_moment,
    support_hint,
    tail_class,
)


@pytest.fixture
def bimodal() -> Mixture:
    """0.3 N(2, 1) + 0.7 N(-2, 1)."""
    return Mixture((0.3, 0.7), (Gaussian(2.0, 1.0), Gaussian(-2.0, 1.0)))


class TestConstruction:
    """Tests for the construction invariants of density records."""

    @pytest.mark.parametrize(
        "build",
        [
            lambda: Gaussian(0.0, 0.0),
            lambda: Gaussian(math.nan, 1.0),
            lambda: Laplace(0.0, -1.0),
            lambda: StudentT(0.0, 0.0, 1.0),
            lambda: Cauchy(math.inf, 1.0),
            lambda: Mixture((0.5, 0.6), (Gaussian(0, 1), Gaussian(1, 1))),
            lambda: Mixture((1.0,), (Gaussian(0, 1), Gaussian(1, 1))),
            lambda: Mixture((1.2, -0.2), (Gaussian(0, 1), Gaussian(1, 1))),
            lambda: LambdaCoefficients(()),
            lambda: LambdaCoefficients((1.0, math.nan)),
            lambda: LambdaCoefficients((1.0,), scale=0.0),
            lambda: RationalSurrogate(Gaussian(0, 1), LambdaCoefficients((1.0, 1.0))),
            lambda: RationalSurrogate(Gaussian(0, 1), LambdaCoefficients((-1.0, 0.0, 1.0))),
            lambda: RationalSurrogate(Gaussian(0, 1), LambdaCoefficients((1.0,)), normalizer=0.0),
            lambda: ExpPoly(LambdaCoefficients((0.0, 0.0, -1.0))),
            lambda: ExpPoly(LambdaCoefficients((0.0, 1.0))),
            lambda: DiscreteNoise((1.0, -1.0), (0.5, 0.4)),
            lambda: DiscreteNoise((), ()),
        ],
    )
    def test_invalid_records_raise(self, build: object) -> None:
        """Every invariant violation raises DensityError."""
        with pytest.raises(DensityError):
            build()  # type: ignore[operator]

    def test_records_are_value_objects(self) -> None:
        """Equal parameters give equal records."""
        assert Gaussian(1.0, 2.0) == Gaussian(1.0, 2.0)
        assert Mixture([0.5, 0.5], [Gaussian(0, 1), Laplace(0, 1)]).weights == (0.5, 0.5)


class TestPdf:
    """Tests for density evaluation."""

    def test_peak_values(self) -> None:
        """Densities at their location match the closed forms."""
        assert eval_pdf(Gaussian(0.0, 1.0), 0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi))
        assert eval_pdf(Laplace(3.0, 2.0), 3.0) == pytest.approx(0.25)
        assert eval_pdf(Cauchy(-0.4, 5.0), -0.4) == pytest.approx(1.0 / (5.0 * math.pi))

    def test_student_t_components_of_heavy_tailed_mixture(self) -> None:
        """Location-scale t densities reproduce the printed normalising constants."""
        assert eval_pdf(StudentT(4.0, 2.0, 1.0), 2.0) == pytest.approx(3.0 / 8.0)
        expected = 8.0 / (3.0 * math.pi * math.sqrt(5.0))
        assert eval_pdf(StudentT(5.0, -2.0, 1.0), -2.0) == pytest.approx(expected)

    def test_mixture_is_weighted_sum(self, bimodal: Mixture) -> None:
        """A mixture evaluates to the weighted sum of its components."""
        xs = np.linspace(-5, 5, 11)
        expected = 0.3 * pdf(Gaussian(2.0, 1.0), xs) + 0.7 * pdf(Gaussian(-2.0, 1.0), xs)
        assert_allclose(pdf(bimodal, xs), expected, rtol=1e-14)

    def test_rational_surrogate_divides_by_q(self) -> None:
        """theta / (q * normalizer)."""
        lam = LambdaCoefficients((1.0, 0.0, 1.0))
        surrogate = RationalSurrogate(Gaussian(0.0, 1.0), lam, normalizer=2.0)
        xs = np.array([-1.0, 0.0, 2.0])
        assert_allclose(pdf(surrogate, xs), pdf(Gaussian(0.0, 1.0), xs) / ((1 + xs**2) * 2.0))

    def test_exp_poly_reproduces_gaussian(self) -> None:
        """exp(-(x^2/2 + log sqrt(2 pi))) is the standard normal."""
        lam = LambdaCoefficients((0.5 * math.log(2 * math.pi), 0.0, 0.5))
        xs = np.linspace(-4, 4, 9)
        assert_allclose(pdf(ExpPoly(lam), xs), pdf(Gaussian(0.0, 1.0), xs), rtol=1e-12)

    def test_non_finite_point_raises(self) -> None:
        """eval_pdf refuses NaN and infinite abscissae."""
        with pytest.raises(DensityDomainError):
            eval_pdf(Gaussian(0.0, 1.0), math.nan)
        with pytest.raises(DensityDomainError):
            eval_pdf(Gaussian(0.0, 1.0), -math.inf)


class TestLambdaCoefficients:
    """Tests for polynomial coefficients in a shifted basis."""

    def test_degree_ignores_trailing_zeros(self) -> None:
        assert LambdaCoefficients((1.0, 2.0, 0.0, 0.0)).degree == 1
        assert LambdaCoefficients((0.0,)).degree == 0

    def test_standard_basis_expansion(self) -> None:
        """((x - 1) / 2)^2 = 0.25 - 0.5 x + 0.25 x^2."""
        lam = LambdaCoefficients((0.0, 0.0, 1.0), center=1.0, scale=2.0)
        standard = lam.in_standard_basis()
        assert standard.center == 0.0 and standard.scale == 1.0
        assert_allclose(standard.coeffs, (0.25, -0.5, 0.25), atol=1e-15)

    def test_standard_basis_is_identity_for_plain_basis(self) -> None:
        lam = LambdaCoefficients((1.0, 2.0, 3.0))
        assert lam.in_standard_basis() is lam


class TestTailClass:
    """Tests for structural tail classification."""

    def test_base_families(self) -> None:
        assert tail_class(Gaussian(0, 1)).kind == "sub_gaussian"
        assert tail_class(Laplace(0, 1)).kind == "exponential"
        assert tail_class(StudentT(4.0, 0, 1)).exponent == 5.0
        assert tail_class(Cauchy(0, 1)).exponent == 2.0

    def test_mixture_takes_heaviest_component(self) -> None:
        mixture = Mixture((0.5, 0.5), (Gaussian(0, 1), StudentT(4.0, 0, 1)))
        assert tail_class(mixture).exponent == 5.0
        mixed = Mixture((0.5, 0.5), (Gaussian(0, 1), Laplace(0, 1)))
        assert tail_class(mixed).kind == "exponential"

    def test_surrogate_with_cauchy_prior_gains_degree(self) -> None:
        """Cauchy / q with deg q = 4 decays like |x|^-6."""
        lam = LambdaCoefficients((1.0, 0.0, 0.0, 0.0, 1.0))
        surrogate = RationalSurrogate(Cauchy(0.0, 1.0), lam)
        tc = tail_class(surrogate)
        assert tc.kind == "polynomial"
        assert tc.exponent == 6.0
        assert str(tc) == "polynomial(6)"

    @pytest.mark.parametrize(
        "density",
        [
            Cauchy(0.0, 1.0),
            StudentT(4.0, 2.0, 1.0),
            RationalSurrogate(Cauchy(0.0, 1.0), LambdaCoefficients((1.0, 0.0, 0.0, 0.0, 1.0))),
        ],
    )
    def test_polynomial_exponent_matches_log_log_slope(self, density: DensityModel) -> None:
        xs = np.array([1e3, 1e4])
        slope = np.diff(np.log(pdf(density, xs)))[0] / np.diff(np.log(xs))[0]
        exponent = tail_class(density).exponent
        assert exponent is not None
        assert slope == pytest.approx(-exponent, abs=0.01)

    def test_sub_gaussian_decays_faster_than_any_power(self) -> None:
        xs = np.array([10.0, 20.0])
        slope = np.diff(np.log(pdf(Gaussian(0.0, 1.0), xs)))[0] / np.log(2.0)
        assert tail_class(Gaussian(0.0, 1.0)) == SUB_GAUSSIAN
        assert slope < -50.0


class TestRawMoment:
    """Tests for raw_moment."""

    def test_closed_forms(self, bimodal: Mixture) -> None:
        assert raw_moment(Gaussian(1.0, 2.0), 2) == pytest.approx(5.0)
        assert raw_moment(Laplace(0.0, 1.0), 4) == pytest.approx(24.0)
        assert raw_moment(StudentT(5.0, 0.0, 1.0), 2) == pytest.approx(5.0 / 3.0)
        assert raw_moment(bimodal, 1) == pytest.approx(-0.8)
        assert raw_moment(bimodal, 2) == pytest.approx(5.0)
        assert raw_moment(bimodal, 3) == pytest.approx(-5.6)
        assert raw_moment(bimodal, 4) == pytest.approx(43.0)

    def test_divergent_moments_are_tagged(self) -> None:
        """A moment whose absolute moment diverges is infinite, odd orders included."""
        assert raw_moment(StudentT(4.0, 0.0, 1.0), 3) == pytest.approx(0.0)
        assert raw_moment(StudentT(4.0, 0.0, 1.0), 4) is Divergence.INFINITE
        assert raw_moment(Cauchy(0.0, 1.0), 1) is Divergence.INFINITE
        assert raw_moment(StudentT(2.0, 0.0, 1.0), 3) is Divergence.INFINITE
        assert raw_moment(Cauchy(0.0, 1.0), 2) is Divergence.INFINITE

    def test_mixture_inherits_divergence(self) -> None:
        mixture = Mixture((0.5, 0.5), (Gaussian(0, 1), Cauchy(0, 1)))
        assert raw_moment(mixture, 2) is Divergence.INFINITE

    def test_zeroth_moment_is_one(self) -> None:
        assert raw_moment(Cauchy(0.0, 1.0), 0) == 1.0

    def test_negative_order_raises(self) -> None:
        with pytest.raises(DensityError):
            raw_moment(Gaussian(0.0, 1.0), -1)


class TestMomentVector:
    """Tests for moment_vector."""

    def test_gaussian_moments_are_exact(self) -> None:
        moments = moment_vector(Gaussian(0.0, 1.0), 6)
        assert moments.values == (1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0)
        assert moments.provenance.kind == "exact"

    def test_odd_order_raises(self) -> None:
        with pytest.raises(DensityError):
            moment_vector(Gaussian(0.0, 1.0), 3)

    def test_divergent_moment_without_radius_raises(self) -> None:
        with pytest.raises(MomentExistenceError):
            moment_vector(StudentT(4.0, 2.0, 1.0), 4)

    def test_truncated_moments_record_radius(self) -> None:
        """A dof-4 t has no fourth moment; truncation to [-20, 20] supplies one."""
        moments = moment_vector(StudentT(4.0, 2.0, 1.0), 4, truncate_radius=20.0)
        assert moments.provenance.kind == "truncated"
        assert moments.provenance.radius == 20.0
        assert moments.provenance.outside_mass is not None
        assert 0.0 < moments.provenance.outside_mass < 1e-3
        assert moments[0] == 1.0
        assert moments[4] > moments[2] > 0

    def test_radius_is_ignored_when_moments_exist(self) -> None:
        moments = moment_vector(Gaussian(0.0, 1.0), 4, truncate_radius=1.0)
        assert moments.provenance.kind == "exact"

    def test_surrogate_moments_by_quadrature(self) -> None:
        """theta / 1 has the prior's moments."""
        surrogate = RationalSurrogate(Gaussian(1.0, 2.0), LambdaCoefficients((1.0, 0.0, 0.0)))
        moments = moment_vector(surrogate, 4)
        expected = moment_vector(Gaussian(1.0, 2.0), 4)
        assert moments.provenance.kind == "quadrature"
        assert_allclose(moments.values, expected.values, rtol=1e-8)

    def test_exp_poly_moments(self) -> None:
        lam = LambdaCoefficients((0.5 * math.log(2 * math.pi), 0.0, 0.5))
        moments = moment_vector(ExpPoly(lam), 4)
        assert_allclose(moments.values, (1.0, 0.0, 1.0, 0.0, 3.0), atol=1e-8)


class TestDiscreteNoise:
    """Tests for two-point and general discrete process noise."""

    def test_exact_moments(self) -> None:
        noise = DiscreteNoise((-1.0, 1.0), (0.5, 0.5))
        moments = noise.moments(4)
        assert moments.values == (1.0, 0.0, 1.0, 0.0, 1.0)
        assert moments.provenance.kind == "exact"

    def test_sample_draws_atoms(self) -> None:
        noise = DiscreteNoise((-1.0, 3.0), (0.25, 0.75))
        rng = np.random.default_rng(0)
        draws = {noise.sample(rng) for _ in range(50)}
        assert draws <= {-1.0, 3.0}


class TestSupportHint:
    """Tests for support_hint."""

    def test_mixture_hint_spans_components(self, bimodal: Mixture) -> None:
        center, scale = support_hint(bimodal)
        assert center == pytest.approx(-0.8)
        assert scale == pytest.approx(math.sqrt(5.0 - 0.64))

    def test_surrogate_prefers_stored_hint(self) -> None:
        surrogate = RationalSurrogate(
            Gaussian(0.0, 5.0), LambdaCoefficients((1.0, 0.0, 1.0)), hint=(1.0, 2.0)
        )
        assert support_hint(surrogate) == (1.0, 2.0)

"""Analytic scalar densities.

A small zoo of immutable density records (Gaussian, Laplace, Student-t,
Cauchy, finite mixtures, rational surrogates theta/q and exponential
polynomials) with vectorised evaluation, raw moments and a structural
classification of the tails.

Closed-form moments are used wherever they exist. Rational surrogates and
exponential polynomials fall back to adaptive quadrature.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Literal

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P
from numpy.typing import ArrayLike, NDArray
from scipy import stats

from msfilter.core.moments import MomentSequence, Provenance
from msfilter.core.quadrature import (
    QuadratureConfig,
    integrate_interval,
    integrate_line,
)

MIXTURE_WEIGHT_TOL = 1e-12

# Relative size of the imaginary part below which a root counts as real.
REAL_ROOT_TOL = 1e-7


class DensityError(Exception):
    """Raised when a density record violates its invariants."""


class DensityDomainError(DensityError):
    """Raised when a density is evaluated outside its domain."""


class MomentExistenceError(DensityError):
    """Raised when a requested moment diverges and truncation was not requested."""


class Divergence(Enum):
    """Tag for a moment that does not exist as a finite number.

    A moment of order k is tagged INFINITE whenever the absolute moment
    E|X|^k diverges. Odd orders get the same tag: the integral is not
    absolutely convergent, so no finite value is reported for it.
    """

    INFINITE = "infinite"


@dataclass(frozen=True)
class TailClass:
    """Structural tail classification of a density.

    kind is "sub_gaussian", "exponential" or "polynomial"; for polynomial
    tails the pdf decays like |x|^-exponent.
    """

    kind: Literal["sub_gaussian", "exponential", "polynomial"]
    exponent: float | None = None

    @property
    def heaviness(self) -> float:
        """Larger is heavier; used to pick the dominant mixture component."""
        if self.kind == "polynomial":
            assert self.exponent is not None
            return 1.0 / self.exponent + 2.0
        return 1.0 if self.kind == "exponential" else 0.0

    def __str__(self) -> str:
        if self.kind == "polynomial":
            return f"polynomial({self.exponent:g})"
        return self.kind


SUB_GAUSSIAN = TailClass("sub_gaussian")
EXPONENTIAL = TailClass("exponential")


def polynomial_tail(exponent: float) -> TailClass:
    return TailClass("polynomial", float(exponent))


@dataclass(frozen=True)
class LambdaCoefficients:
    """Coefficients of a polynomial q in the shifted basis u = (x - center) / scale.

    q(x) = sum_k coeffs[k] * u**k. With center 0 and scale 1 this is the
    plain power basis.
    """

    coeffs: tuple[float, ...]
    center: float = 0.0
    scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if not self.coeffs:
            raise DensityError("Polynomial needs at least one coefficient")
        if not all(math.isfinite(c) for c in self.coeffs):
            raise DensityError("Polynomial coefficients must be finite")
        if not (math.isfinite(self.center) and self.scale > 0):
            raise DensityError(f"Invalid basis (center={self.center}, scale={self.scale})")

    @property
    def degree(self) -> int:
        """Degree after dropping trailing zero coefficients (0 for the zero polynomial)."""
        nonzero = [i for i, c in enumerate(self.coeffs) if c != 0.0]
        return nonzero[-1] if nonzero else 0

    def as_array(self) -> NDArray[np.float64]:
        return np.asarray(self.coeffs, dtype=float)

    def __call__(self, x: ArrayLike) -> NDArray[np.float64]:
        u = (np.asarray(x, dtype=float) - self.center) / self.scale
        return np.asarray(P.polyval(u, self.as_array()), dtype=float)

    def in_standard_basis(self) -> LambdaCoefficients:
        """Expand into the power basis in x (center 0, scale 1)."""
        if self.center == 0.0 and self.scale == 1.0:
            return self
        shift = Polynomial([-self.center / self.scale, 1.0 / self.scale])
        expanded = Polynomial(self.as_array())(shift).coef
        padded = np.zeros(len(self.coeffs))
        padded[: len(expanded)] = expanded[: len(self.coeffs)]
        return LambdaCoefficients(tuple(padded))


@dataclass(frozen=True)
class PositivityCertificate:
    """Result of certify_positive.

    Attributes:
        positive: True when q > 0 on the whole real line.
        witness: A point x with q(x) <= 0 when not positive.
    """

    positive: bool
    witness: float | None = None

    def __bool__(self) -> bool:
        return self.positive


def as_coefficients(lam: LambdaCoefficients | Sequence[float]) -> LambdaCoefficients:
    if isinstance(lam, LambdaCoefficients):
        return lam
    return LambdaCoefficients(tuple(float(c) for c in lam))


def certify_positive(lam: LambdaCoefficients | Sequence[float]) -> PositivityCertificate:
    """Decide whether q(x) > 0 for every real x.

    q is positive iff its degree is even, its leading coefficient is positive
    and it has no real root. Roots are the eigenvalues of the companion
    matrix; a root whose imaginary part is negligible is checked directly.
    """
    lam = as_coefficients(lam)
    c = lam.as_array()
    degree = lam.degree
    lead = c[degree]

    def to_x(u: float) -> float:
        return lam.center + lam.scale * u

    if degree == 0:
        return PositivityCertificate(True) if lead > 0 else PositivityCertificate(False, to_x(0.0))

    coeffs = c[: degree + 1]
    # Cauchy bound: every root has |u| < bound, so q has the sign of its tails beyond it
    bound = 1.0 + float(np.max(np.abs(coeffs[:-1] / lead)))
    if lead < 0:
        return PositivityCertificate(False, to_x(bound))
    if degree % 2 == 1:
        return PositivityCertificate(False, to_x(-bound))

    roots = P.polyroots(coeffs)
    near_real = roots[np.abs(roots.imag) <= REAL_ROOT_TOL * np.maximum(1.0, np.abs(roots))].real
    critical = P.polyroots(P.polyder(coeffs))
    critical = critical[
        np.abs(critical.imag) <= REAL_ROOT_TOL * np.maximum(1.0, np.abs(critical))
    ].real
    candidates = np.sort(np.concatenate([near_real, critical]))[::-1]
    for u in candidates:
        if P.polyval(u, coeffs) <= 0.0:
            return PositivityCertificate(False, to_x(float(u)))
    return PositivityCertificate(True)


def _require_positive(name: str, value: float) -> None:
    if not (math.isfinite(value) and value > 0):
        raise DensityError(f"{name} must be a positive finite number, got {value}")


def _require_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise DensityError(f"{name} must be finite, got {value}")


@dataclass(frozen=True)
class Gaussian:
    mean: float
    std: float

    def __post_init__(self) -> None:
        _require_finite("mean", self.mean)
        _require_positive("std", self.std)


@dataclass(frozen=True)
class Laplace:
    location: float
    scale: float

    def __post_init__(self) -> None:
        _require_finite("location", self.location)
        _require_positive("scale", self.scale)


@dataclass(frozen=True)
class StudentT:
    """Location-scale Student-t: pdf((x - location) / scale) / scale."""

    dof: float
    location: float
    scale: float

    def __post_init__(self) -> None:
        _require_positive("dof", self.dof)
        _require_finite("location", self.location)
        _require_positive("scale", self.scale)


@dataclass(frozen=True)
class Cauchy:
    location: float
    scale: float

    def __post_init__(self) -> None:
        _require_finite("location", self.location)
        _require_positive("scale", self.scale)


@dataclass(frozen=True)
class Mixture:
    weights: tuple[float, ...]
    components: tuple[DensityModel, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.weights) != len(self.components) or not self.weights:
            raise DensityError("Mixture needs one positive weight per component")
        if any(not w > 0 for w in self.weights):
            raise DensityError("Mixture weights must be positive")
        if abs(math.fsum(self.weights) - 1.0) > MIXTURE_WEIGHT_TOL:
            raise DensityError(f"Mixture weights sum to {math.fsum(self.weights)!r}, not 1")


@dataclass(frozen=True)
class RationalSurrogate:
    """The density prior(x) / (q(x) * normalizer).

    Attributes:
        prior: The reference density theta.
        lam: Coefficients of the positive denominator q.
        normalizer: Mass of prior/q before renormalisation.
        hint: (center, scale) of the density's bulk, used to centre quadrature.
    """

    prior: DensityModel
    lam: LambdaCoefficients
    normalizer: float = 1.0
    hint: tuple[float, float] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        _require_positive("normalizer", self.normalizer)
        if self.lam.degree % 2 == 1:
            raise DensityError("Surrogate denominator must have even degree")
        cert = certify_positive(self.lam)
        if not cert:
            raise DensityError(
                f"Surrogate denominator is not positive on the real line "
                f"(q({cert.witness:.6g}) <= 0)"
            )


@dataclass(frozen=True)
class ExpPoly:
    """The density exp(-q(x)) for an even-degree q with positive leading coefficient."""

    lam: LambdaCoefficients

    def __post_init__(self) -> None:
        degree = self.lam.degree
        if degree == 0 or degree % 2 == 1 or self.lam.coeffs[degree] <= 0:
            raise DensityError(
                "Exponential polynomial needs even top degree with positive leading coefficient"
            )


@dataclass(frozen=True)
class DiscreteNoise:
    """Noise taking value atoms[i] with probability probabilities[i].

    Only used as process noise; it has no density.
    """

    atoms: tuple[float, ...]
    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "atoms", tuple(float(a) for a in self.atoms))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        if not self.atoms or len(self.atoms) != len(self.probabilities):
            raise DensityError("Discrete noise needs one probability per atom")
        if not all(math.isfinite(a) for a in self.atoms):
            raise DensityError("Discrete noise atoms must be finite")
        if any(not p > 0 for p in self.probabilities):
            raise DensityError("Discrete noise probabilities must be positive")
        total = math.fsum(self.probabilities)
        if abs(total - 1.0) > MIXTURE_WEIGHT_TOL:
            raise DensityError(f"Discrete noise probabilities sum to {total!r}, not 1")

    def moments(self, order: int) -> MomentSequence:
        """Exact moments sum_i p_i * atom_i^k."""
        values = [
            math.fsum(p * a**k for a, p in zip(self.atoms, self.probabilities, strict=True))
            for k in range(order + 1)
        ]
        values[0] = 1.0
        return MomentSequence(tuple(values), Provenance.exact())

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.choice(np.asarray(self.atoms), p=np.asarray(self.probabilities)))


DensityModel = Gaussian | Laplace | StudentT | Cauchy | Mixture | RationalSurrogate | ExpPoly


def pdf(model: DensityModel, x: ArrayLike) -> NDArray[np.float64]:
    """Evaluate the density at x (vectorised)."""
    xs = np.asarray(x, dtype=float)
    match model:
        case Gaussian(mean=m, std=s):
            return np.asarray(stats.norm.pdf(xs, loc=m, scale=s), dtype=float)
        case Laplace(location=m, scale=b):
            return np.asarray(stats.laplace.pdf(xs, loc=m, scale=b), dtype=float)
        case StudentT(dof=nu, location=m, scale=s):
            return np.asarray(stats.t.pdf(xs, nu, loc=m, scale=s), dtype=float)
        case Cauchy(location=m, scale=s):
            return np.asarray(stats.cauchy.pdf(xs, loc=m, scale=s), dtype=float)
        case Mixture(weights=ws, components=cs):
            total = np.zeros_like(xs)
            for w, c in zip(ws, cs, strict=True):
                total = total + w * pdf(c, xs)
            return total
        case RationalSurrogate(prior=theta, lam=lam, normalizer=z):
            return pdf(theta, xs) / (lam(xs) * z)
        case ExpPoly(lam=lam):
            with np.errstate(over="ignore"):
                return np.exp(-lam(xs))
    raise DensityError(f"Unknown density model {type(model).__name__}")


def eval_pdf(model: DensityModel, x: float) -> float:
    """Evaluate the density at a single finite point.

    Raises:
        DensityDomainError: If x is NaN or infinite.
    """
    if not math.isfinite(x):
        raise DensityDomainError(f"Density evaluated at non-finite point {x!r}")
    return float(pdf(model, x))


def tail_class(model: DensityModel) -> TailClass:
    """Classify the tail decay of a density from its structure alone."""
    match model:
        case Gaussian() | ExpPoly():
            return SUB_GAUSSIAN
        case Laplace():
            return EXPONENTIAL
        case StudentT(dof=nu):
            return polynomial_tail(nu + 1.0)
        case Cauchy():
            return polynomial_tail(2.0)
        case Mixture(components=cs):
            return max((tail_class(c) for c in cs), key=lambda tc: tc.heaviness)
        case RationalSurrogate(prior=theta, lam=lam):
            base = tail_class(theta)
            if base.kind == "polynomial":
                assert base.exponent is not None
                return polynomial_tail(base.exponent + lam.degree)
            return base
    raise DensityError(f"Unknown density model {type(model).__name__}")


def support_hint(model: DensityModel) -> tuple[float, float]:
    """Return (center, scale) locating the bulk of the density."""
    match model:
        case Gaussian(mean=m, std=s):
            return m, s
        case Laplace(location=m, scale=b):
            return m, b * math.sqrt(2.0)
        case StudentT(dof=nu, location=m, scale=s):
            return m, s * math.sqrt(nu / (nu - 2.0)) if nu > 2.0 else s
        case Cauchy(location=m, scale=s):
            return m, s
        case Mixture(weights=ws, components=cs):
            hints = [support_hint(c) for c in cs]
            center = math.fsum(w * c for w, (c, _) in zip(ws, hints, strict=True))
            spread = math.fsum(
                w * (s * s + (c - center) ** 2) for w, (c, s) in zip(ws, hints, strict=True)
            )
            return center, math.sqrt(spread)
        case RationalSurrogate(prior=theta, hint=hint):
            return hint if hint is not None else support_hint(theta)
        case ExpPoly(lam=lam):
            return lam.center, lam.scale
    raise DensityError(f"Unknown density model {type(model).__name__}")


def _standard_normal_moment(j: int) -> float:
    if j % 2 == 1:
        return 0.0
    return float(math.prod(range(j - 1, 0, -2)))


def _standard_laplace_moment(j: int) -> float:
    return 0.0 if j % 2 == 1 else float(math.factorial(j))


def _standard_t_moment(j: int, nu: float) -> float:
    if j % 2 == 1:
        return 0.0
    value = nu ** (j // 2)
    for i in range(1, j // 2 + 1):
        value *= (2 * i - 1) / (nu - 2 * i)
    return value


def _affine_moment(location: float, scale: float, k: int, standard: list[float]) -> float:
    """E[(location + scale*Z)^k] from the standard moments E[Z^j], j <= k."""
    return math.fsum(
        math.comb(k, j) * location ** (k - j) * scale**j * standard[j] for j in range(k + 1)
    )


def _quadrature_moments(
    model: DensityModel,
    order: int,
    config: QuadratureConfig | None,
) -> tuple[NDArray[np.float64], float]:
    center, scale = support_hint(model)
    powers = np.arange(order + 1)

    def integrand(x: float) -> NDArray[np.float64]:
        return np.asarray(float(pdf(model, x)) * x**powers, dtype=float)

    result = integrate_line(integrand, config, center=center, scale=scale)
    return np.asarray(result.value, dtype=float), result.err_estimate


def raw_moment(
    model: DensityModel,
    k: int,
    config: QuadratureConfig | None = None,
) -> float | Divergence:
    """Return E[X^k], or a Divergence tag when the moment does not exist.

    Raises:
        DensityError: If k is negative.
    """
    if k < 0:
        raise DensityError(f"Moment order must be nonnegative, got {k}")
    if k == 0:
        return 1.0
    match model:
        case Gaussian(mean=m, std=s):
            return _affine_moment(m, s, k, [_standard_normal_moment(j) for j in range(k + 1)])
        case Laplace(location=m, scale=b):
            return _affine_moment(m, b, k, [_standard_laplace_moment(j) for j in range(k + 1)])
        case StudentT(dof=nu, location=m, scale=s):
            if k >= nu:
                return Divergence.INFINITE
            return _affine_moment(m, s, k, [_standard_t_moment(j, nu) for j in range(k + 1)])
        case Cauchy():
            return Divergence.INFINITE
        case Mixture(weights=ws, components=cs):
            parts = [raw_moment(c, k, config) for c in cs]
            if any(isinstance(p, Divergence) for p in parts):
                return Divergence.INFINITE
            return math.fsum(w * float(p) for w, p in zip(ws, parts, strict=True))
        case RationalSurrogate() | ExpPoly():
            tc = tail_class(model)
            if tc.kind == "polynomial" and tc.exponent is not None and k >= tc.exponent - 1:
                return Divergence.INFINITE
            values, _ = _quadrature_moments(model, k, config)
            return float(values[k] / values[0])
    raise DensityError(f"Unknown density model {type(model).__name__}")


def _truncated_moments(
    model: DensityModel,
    order: int,
    radius: float,
    config: QuadratureConfig | None,
) -> MomentSequence:
    powers = np.arange(order + 1)

    def integrand(x: float) -> NDArray[np.float64]:
        return np.asarray(float(pdf(model, x)) * x**powers, dtype=float)

    result = integrate_interval(integrand, -radius, radius, config)
    values = np.asarray(result.value, dtype=float)
    normalized = values / values[0]
    normalized[0] = 1.0
    return MomentSequence(
        tuple(normalized),
        Provenance.truncated(radius, error=result.err_estimate, outside_mass=1.0 - values[0]),
    )


def moment_vector(
    model: DensityModel,
    order: int,
    truncate_radius: float | None = None,
    config: QuadratureConfig | None = None,
) -> MomentSequence:
    """Raw moments sigma_0..sigma_order of a density.

    Args:
        model: The density.
        order: Even top order 2n.
        truncate_radius: If given, moments that diverge on the whole line are
            replaced by moments of the density restricted and renormalised to
            [-R, R]; the provenance records R.
        config: Quadrature settings for non-closed-form models.

    Raises:
        MomentExistenceError: If a moment diverges and no truncation radius is given.
    """
    if order < 0 or order % 2 == 1:
        raise DensityError(f"Moment order must be even and nonnegative, got {order}")

    divergent = [k for k in range(order + 1) if _moment_diverges(model, k)]
    if divergent:
        if truncate_radius is None:
            raise MomentExistenceError(
                f"Moment of order {divergent[0]} of {type(model).__name__} does not exist; "
                f"set a truncation radius to use truncated moments"
            )
        return _truncated_moments(model, order, truncate_radius, config)

    if isinstance(model, RationalSurrogate | ExpPoly):
        values, err = _quadrature_moments(model, order, config)
        normalized = values / values[0]
        normalized[0] = 1.0
        return MomentSequence(tuple(normalized), Provenance.quadrature(err))

    exact = [raw_moment(model, k, config) for k in range(order + 1)]
    return MomentSequence(tuple(float(v) for v in exact), Provenance.exact())


def _moment_diverges(model: DensityModel, k: int) -> bool:
    if k == 0:
        return False
    if isinstance(model, RationalSurrogate | ExpPoly):
        tc = tail_class(model)
        return tc.kind == "polynomial" and tc.exponent is not None and k >= tc.exponent - 1
    return isinstance(raw_moment(model, k), Divergence)

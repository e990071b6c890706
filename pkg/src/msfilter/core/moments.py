"""Moment-sequence algebra.

Power-moment sequences, their Hankel matrices, a positive-definiteness test,
and the two moment maps of the filter: the time update (binomial expansion
over independent state and process noise) and the measurement update
(Bayes' rule with the observation likelihood, by quadrature).
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from msfilter.core.quadrature import QuadratureConfig, integrate_line

if TYPE_CHECKING:
    from msfilter.core.densities import DensityModel

NORMALIZATION_TOL = 1e-10
NORMALIZER_FLOOR = 1e-300


class MomentError(Exception):
    """Raised when a moment sequence is malformed or two sequences disagree."""


class DegenerateObservationError(MomentError):
    """Raised when an observation has (numerically) zero likelihood under the prediction."""


@dataclass(frozen=True)
class Provenance:
    """Where a moment sequence came from.

    Attributes:
        kind: "exact" for closed forms, "quadrature" for numerical integrals,
            "truncated" for moments of a density restricted to [-radius, radius].
        error: Largest absolute error estimate carried by the values.
        radius: Truncation radius for "truncated" sequences.
        outside_mass: Probability mass discarded by truncation.
    """

    kind: Literal["exact", "quadrature", "truncated"] = "exact"
    error: float = 0.0
    radius: float | None = None
    outside_mass: float | None = None

    @classmethod
    def exact(cls) -> Provenance:
        return cls("exact")

    @classmethod
    def quadrature(cls, error: float) -> Provenance:
        return cls("quadrature", error=error)

    @classmethod
    def truncated(cls, radius: float, error: float = 0.0, outside_mass: float = 0.0) -> Provenance:
        return cls("truncated", error=error, radius=radius, outside_mass=outside_mass)

    def combine(self, other: Provenance) -> Provenance:
        """Provenance of a sequence computed from self and other."""
        if self.kind == "truncated" or other.kind == "truncated":
            source = self if self.kind == "truncated" else other
            return Provenance(
                "truncated",
                error=max(self.error, other.error),
                radius=source.radius,
                outside_mass=source.outside_mass,
            )
        if self.kind == "exact" and other.kind == "exact":
            return self
        return Provenance.quadrature(max(self.error, other.error))


@dataclass(frozen=True)
class MomentSequence:
    """Raw power moments sigma_0..sigma_2n of a scalar density."""

    values: tuple[float, ...]
    provenance: Provenance = Provenance()

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) % 2 == 0:
            raise MomentError(
                f"A moment sequence needs an odd number of entries, got {len(self.values)}"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise MomentError("Moment values must be finite")
        if abs(self.values[0] - 1.0) > NORMALIZATION_TOL:
            raise MomentError(f"sigma_0 must be 1, got {self.values[0]!r}")

    @property
    def order(self) -> int:
        return len(self.values) - 1

    def __getitem__(self, k: int) -> float:
        return self.values[k]

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> NDArray[np.float64]:
        return np.asarray(self.values, dtype=float)

    @property
    def mean(self) -> float:
        return self.values[1] if self.order >= 1 else 0.0

    @property
    def variance(self) -> float:
        if self.order < 2:
            raise MomentError("Variance needs a sequence of order at least 2")
        return self.values[2] - self.values[1] ** 2

    def truncate(self, order: int) -> MomentSequence:
        """The leading sigma_0..sigma_order of this sequence."""
        if order > self.order or order % 2 == 1:
            raise MomentError(f"Cannot truncate order {self.order} sequence to order {order}")
        return MomentSequence(self.values[: order + 1], self.provenance)


@dataclass(frozen=True, eq=False)
class HankelMatrix:
    """(n+1)x(n+1) matrix with entries[i, j] = sigma_{i+j}."""

    entries: NDArray[np.float64]

    @property
    def size(self) -> int:
        return int(self.entries.shape[0])


@dataclass(frozen=True)
class Definiteness:
    """Outcome of a positive-definiteness test.

    Attributes:
        positive: True when the matrix is strictly positive definite.
        min_eigenvalue: Smallest eigenvalue of the matrix.
        failed_pivot: Index of the first leading minor whose factorisation
            failed, or None when the test passed.
    """

    positive: bool
    min_eigenvalue: float
    failed_pivot: int | None = None

    def __bool__(self) -> bool:
        return self.positive


def hankel_from(seq: MomentSequence) -> HankelMatrix:
    """Hankel matrix of a sequence of order 2n."""
    n = seq.order // 2
    values = seq.as_array()
    return HankelMatrix(scipy.linalg.hankel(values[: n + 1], values[n:]))


def is_positive_definite(H: HankelMatrix) -> Definiteness:
    """Decide strict positive definiteness by Cholesky factorisation.

    The matrix is first scaled to unit diagonal so that the test is not
    dominated by the growth of high-order moments.
    """
    A = H.entries
    min_eig = float(np.linalg.eigvalsh(A)[0])
    diag = np.diag(A)
    nonpositive = np.flatnonzero(diag <= 0)
    if nonpositive.size:
        return Definiteness(False, min_eig, int(nonpositive[0]))

    d = 1.0 / np.sqrt(diag)
    scaled = A * np.outer(d, d)
    try:
        scipy.linalg.cholesky(scaled, lower=True)
    except np.linalg.LinAlgError:
        for k in range(1, H.size + 1):
            try:
                scipy.linalg.cholesky(scaled[:k, :k], lower=True)
            except np.linalg.LinAlgError:
                return Definiteness(False, min_eig, k - 1)
        return Definiteness(False, min_eig, H.size - 1)
    return Definiteness(True, min_eig)


def time_update(
    post_moments: MomentSequence,
    noise_moments: MomentSequence,
    f: float,
) -> MomentSequence:
    """Moments of f*x + eta for independent x and eta.

    sigma_k' = sum_j C(k, j) f^j E[x^j] E[eta^(k-j)], with 0^0 = 1.

    Raises:
        MomentError: If the two sequences have different orders.
    """
    if post_moments.order != noise_moments.order:
        raise MomentError(
            f"Order mismatch: posterior has order {post_moments.order}, "
            f"noise has order {noise_moments.order}"
        )
    provenance = post_moments.provenance.combine(noise_moments.provenance)
    if f == 0.0:
        return MomentSequence(noise_moments.values, provenance)

    x = post_moments.values
    eta = noise_moments.values
    values = [
        math.fsum(math.comb(k, j) * f**j * x[j] * eta[k - j] for j in range(k + 1))
        for k in range(post_moments.order + 1)
    ]
    values[0] = 1.0
    return MomentSequence(tuple(values), provenance)


@dataclass(frozen=True)
class MeasurementUpdate:
    """Posterior moments and the evidence integral that normalised them."""

    moments: MomentSequence
    normalizer: float


def posterior_moments(
    pred: DensityModel,
    likelihood: Callable[[float], float],
    order: int,
    config: QuadratureConfig | None = None,
) -> MeasurementUpdate:
    """Moments of likelihood(x) * pred(x) / normalizer.

    Raises:
        DegenerateObservationError: If the normalizer is below 1e-300.
    """
    from msfilter.core.densities import pdf, support_hint

    center, scale = support_hint(pred)
    powers = np.arange(order + 1)

    def integrand(x: float) -> NDArray[np.float64]:
        weight = likelihood(x) * float(pdf(pred, x))
        return np.asarray(weight * x**powers, dtype=float)

    result = integrate_line(integrand, config, center=center, scale=scale)
    raw = np.asarray(result.value, dtype=float)
    normalizer = float(raw[0])
    if not normalizer >= NORMALIZER_FLOOR:
        raise DegenerateObservationError(
            f"Observation has likelihood {normalizer:.3g} under the prediction"
        )
    values = raw / normalizer
    values[0] = 1.0
    return MeasurementUpdate(
        MomentSequence(tuple(values), Provenance.quadrature(result.err_estimate / normalizer)),
        normalizer,
    )


def measurement_update_moments(
    pred: DensityModel,
    noise: DensityModel,
    y: float,
    h: float,
    order: int,
    config: QuadratureConfig | None = None,
) -> MeasurementUpdate:
    """Posterior moments after observing y = h*x + eps, eps ~ noise.

    Args:
        pred: Predicted density of x.
        noise: Density of the observation noise eps.
        y: The observation.
        h: Observation gain.
        order: Even top moment order 2n.
        config: Quadrature settings.

    Returns:
        MeasurementUpdate with sigma_0 exactly 1 and the evidence integral.

    Raises:
        DegenerateObservationError: If the observation is incompatible with the prediction.
    """
    from msfilter.core.densities import eval_pdf

    if order < 0 or order % 2 == 1:
        raise MomentError(f"Moment order must be even and nonnegative, got {order}")

    def likelihood(x: float) -> float:
        return eval_pdf(noise, y - h * x)

    return posterior_moments(pred, likelihood, order, config)

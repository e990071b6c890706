"""Scalar linear system x_{t+1} = f_t x_t + eta_t, y_t = h_t x_t + eps_t."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

from msfilter.core.densities import DensityModel, DiscreteNoise, moment_vector
from msfilter.core.moments import MomentSequence
from msfilter.core.quadrature import QuadratureConfig


class SystemModelError(Exception):
    """Raised when a system description is inconsistent."""


ProcessNoise = DensityModel | DiscreteNoise


def noise_moments(
    noise: ProcessNoise,
    order: int,
    truncate_radius: float | None = None,
    quadrature: QuadratureConfig | None = None,
) -> MomentSequence:
    """Moment sequence of a process-noise record, discrete or continuous."""
    if isinstance(noise, DiscreteNoise):
        return noise.moments(order)
    return moment_vector(noise, order, truncate_radius, quadrature)


@dataclass(frozen=True)
class StepModel:
    """The system coefficients and noises in force at one time index."""

    f: float
    h: float
    process_noise: ProcessNoise
    obs_noise: DensityModel


@dataclass(frozen=True)
class SystemModel:
    """Time-varying scalar linear system over a finite horizon.

    Each sequence holds one entry per time index and must cover the horizon.
    """

    f: tuple[float, ...]
    h: tuple[float, ...]
    process_noise: tuple[ProcessNoise, ...]
    obs_noise: tuple[DensityModel, ...]
    horizon: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "f", tuple(float(v) for v in self.f))
        object.__setattr__(self, "h", tuple(float(v) for v in self.h))
        object.__setattr__(self, "process_noise", tuple(self.process_noise))
        object.__setattr__(self, "obs_noise", tuple(self.obs_noise))
        if self.horizon < 0:
            raise SystemModelError("Horizon must be nonnegative")
        for name in ("f", "h", "process_noise", "obs_noise"):
            if len(getattr(self, name)) < self.horizon:
                raise SystemModelError(
                    f"System sequence '{name}' has {len(getattr(self, name))} entries, "
                    f"horizon is {self.horizon}"
                )
        if not all(math.isfinite(v) for v in self.f + self.h):
            raise SystemModelError("System coefficients must be finite")

    @classmethod
    def constant(
        cls,
        f: float,
        h: float,
        process_noise: ProcessNoise,
        obs_noise: DensityModel,
        horizon: int,
    ) -> SystemModel:
        """A time-invariant system repeated over the horizon."""
        n = max(horizon, 1)
        return cls(
            f=(f,) * n,
            h=(h,) * n,
            process_noise=(process_noise,) * n,
            obs_noise=(obs_noise,) * n,
            horizon=horizon,
        )

    @classmethod
    def from_sequences(
        cls,
        f: Sequence[float],
        h: Sequence[float],
        process_noise: Sequence[ProcessNoise],
        obs_noise: Sequence[DensityModel],
    ) -> SystemModel:
        horizon = min(len(f), len(h), len(process_noise), len(obs_noise))
        return cls(tuple(f), tuple(h), tuple(process_noise), tuple(obs_noise), horizon)

    def at(self, t: int) -> StepModel:
        if not 0 <= t < self.horizon:
            raise SystemModelError(f"Time index {t} outside horizon {self.horizon}")
        return StepModel(self.f[t], self.h[t], self.process_noise[t], self.obs_noise[t])

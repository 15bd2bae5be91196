"""Variance-exploding noise schedule and the rho-spaced backward time grid.

Forward time ``s`` coincides with the noise level (sigma(s) = s), the forward
drift is zero and the forward diffusion coefficient is ``U_s = sqrt(2 s)``.
Backward time is ``t = sigma_max - s``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise range, grid spacing exponent and backward-noise churn ratio.

    ``churn`` is ``V_t / U_t``; 1 gives the usual reverse SDE and 0 the
    probability-flow limit.
    """

    sigma_min: float = 0.005
    sigma_max: float = 50.0
    rho: float = 7.0
    churn: float = 1.0

    def __post_init__(self):
        if not (self.sigma_min > 0 and self.sigma_max > self.sigma_min):
            raise InvalidScheduleError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if self.rho <= 0:
            raise InvalidScheduleError(f"rho must be positive, got {self.rho}")
        if self.churn < 0:
            raise InvalidScheduleError(f"churn must be >= 0, got {self.churn}")

    @property
    def horizon(self) -> float:
        """Final backward time ``T = sigma_max - sigma_min``."""
        return self.sigma_max - self.sigma_min

    def noise_level(self, t):
        return self.sigma_max - t

    def forward_diffusion(self, t):
        """``U_t = sqrt(2 sigma_t)``, the reversed forward diffusion coefficient."""
        return np.sqrt(2.0 * self.noise_level(t))

    def backward_diffusion(self, t):
        """``V_t = churn * U_t``."""
        return self.churn * self.forward_diffusion(t)

    def to_dict(self) -> dict:
        return {"sigma_min": self.sigma_min, "sigma_max": self.sigma_max,
                "rho": self.rho, "churn": self.churn}


@dataclass(frozen=True)
class TimeGrid:
    steps: np.ndarray

    @property
    def M(self) -> int:
        return len(self.steps) - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.steps)

    def __len__(self):
        return len(self.steps)


def build_time_grid(sched: DiffusionSchedule, M: int) -> TimeGrid:
    """Backward times ``t_k = sigma_max - sigma_k`` with sigma_k rho-spaced.

    ``sigma_k = (sigma_max^(1/rho) + k/M (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho``.
    The endpoints are pinned exactly to 0 and ``sigma_max - sigma_min``.
    """
    if sched.sigma_min >= sched.sigma_max:
        raise InvalidScheduleError("sigma_min must be below sigma_max")
    if int(M) < 1:
        raise ValueError(f"M must be at least 1, got {M}")
    M = int(M)
    inv_rho = 1.0 / sched.rho
    a = sched.sigma_max ** inv_rho
    b = sched.sigma_min ** inv_rho
    k = np.arange(M + 1, dtype=float)
    sigmas = (a + k / M * (b - a)) ** sched.rho
    steps = sched.sigma_max - sigmas
    steps[0] = 0.0
    steps[-1] = sched.sigma_max - sched.sigma_min
    return TimeGrid(steps=steps)

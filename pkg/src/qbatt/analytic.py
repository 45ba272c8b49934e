"""Closed-form self-discharge of one qutrit prepared in |2>.

Relaxation alone gives the cascade |2> -> |1> -> |0>:

    p2' = -G12 p2,   p1' = -G01 p1 + G12 p2,   p0' = G01 p1

whose solution is written with the stable difference
exp(-G12 t) - exp(-G01 t) = -exp(-G12 t) * expm1(-(G01 - G12) t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

#: relative rate difference below which the equal-rate limit is used
DEGENERATE_RTOL = 1e-10


@dataclass(frozen=True)
class RateParams:
    gamma01: float
    gamma12: float
    omega_levels: tuple = (0.0, 1.0, 1.95)

    def __post_init__(self):
        if self.gamma01 < 0 or self.gamma12 < 0:
            raise DomainError("relaxation rates must be non-negative")

    @property
    def omega01(self) -> float:
        return self.omega_levels[1] - self.omega_levels[0]

    @property
    def omega12(self) -> float:
        return self.omega_levels[2] - self.omega_levels[1]

    @property
    def omega02(self) -> float:
        return self.omega_levels[2] - self.omega_levels[0]

    @property
    def degenerate(self) -> bool:
        scale = max(self.gamma01, self.gamma12)
        return abs(self.gamma01 - self.gamma12) <= DEGENERATE_RTOL * scale


def analytic_populations(t: float, p: RateParams) -> tuple[float, float, float]:
    """Populations (rho11, rho22, rho33) of |0>, |1>, |2> at time ``t``."""
    if t < 0:
        raise DomainError("time must be non-negative")
    g01, g12 = p.gamma01, p.gamma12
    rho33 = math.exp(-g12 * t)
    if p.degenerate:
        rho22 = g12 * t * rho33
    else:
        d = g01 - g12
        # G12 (e^{-G12 t} - e^{-G01 t}) / (G01 - G12)
        rho22 = -g12 * rho33 * math.expm1(-d * t) / d
    rho11 = 1.0 - rho22 - rho33
    return rho11, rho22, rho33


def analytic_energy(t: float, p: RateParams) -> float:
    """Battery energy E_d(t) during self-discharge from |2>."""
    if t < 0:
        raise DomainError("time must be non-negative")
    w0, w1, w2 = p.omega_levels
    if p.degenerate:
        r11, r22, r33 = analytic_populations(t, p)
        return w0 * r11 + w1 * r22 + w2 * r33
    g01, g12 = p.gamma01, p.gamma12
    num = math.exp(-g12 * t) * (g01 * p.omega02 - g12 * p.omega12) - math.exp(
        -g01 * t
    ) * g12 * p.omega01
    return num / (g01 - g12) + w0

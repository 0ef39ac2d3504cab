"""f-divergence generators and their convex conjugates.

Each family provides f, f', the conjugate f*(t) = sup_u {u t - f(u)} in
closed form, and (f*)'(t), which is the maximizing u. The conjugate domain
is an interval (-inf, hi) with hi possibly infinite.

======  ==========================================  =============
family  f(u)                                        dom(f*)
======  ==========================================  =============
FAIRL   u log u                                     all reals
AIRL    -log u                                      t < 0
GAIL    -(u+1) log((1+u)/2) + u log u               t < log 2
ALPHA   (u^(1-a) - (1-a) u - a) / (a (a-1))          t < 1/a
======  ==========================================  =============

GAIL's generator gives twice the Jensen-Shannon divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import xlogy

from align_lab.config import get_settings
from align_lab.core.exceptions import DomainError


class FFamily(str, Enum):
    """Supported generator families."""

    AIRL = "airl"
    GAIL = "gail"
    FAIRL = "fairl"
    ALPHA = "alpha"


@dataclass(frozen=True)
class FDivSpec:
    """A generator f with its conjugate and conjugate domain."""

    family: FFamily
    alpha: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", FFamily(self.family))
        if self.family is FFamily.ALPHA and not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def name(self) -> str:
        if self.family is FFamily.ALPHA:
            return f"alpha({self.alpha:g})"
        return self.family.value

    @property
    def conjugate_domain(self) -> tuple[float, float]:
        """Open interval (lo, hi) on which f* is finite."""
        hi = {
            FFamily.FAIRL: math.inf,
            FFamily.AIRL: 0.0,
            FFamily.GAIL: math.log(2.0),
            FFamily.ALPHA: 1.0 / self.alpha,
        }[self.family]
        return -math.inf, hi

    def in_domain(self, t: np.ndarray | float) -> np.ndarray:
        lo, hi = self.conjugate_domain
        arr = np.asarray(t, dtype=np.float64)
        return (arr > lo) & (arr < hi) & np.isfinite(arr)

    def f(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if self.family is FFamily.FAIRL:
            return xlogy(u, u)
        if self.family is FFamily.AIRL:
            with np.errstate(divide="ignore"):
                return -np.log(u)
        if self.family is FFamily.GAIL:
            return -xlogy(u + 1.0, (1.0 + u) / 2.0) + xlogy(u, u)
        a = self.alpha
        return (u ** (1.0 - a) - (1.0 - a) * u - a) / (a * (a - 1.0))

    def f_prime(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        with np.errstate(divide="ignore"):
            if self.family is FFamily.FAIRL:
                return 1.0 + np.log(u)
            if self.family is FFamily.AIRL:
                return -1.0 / u
            if self.family is FFamily.GAIL:
                return np.log(2.0 * u) - np.log1p(u)
            a = self.alpha
            return (1.0 - u ** (-a)) / a

    @property
    def f_at_zero(self) -> float:
        """lim f(u) as u -> 0+."""
        return {
            FFamily.FAIRL: 0.0,
            FFamily.AIRL: math.inf,
            FFamily.GAIL: math.log(2.0),
            FFamily.ALPHA: 1.0 / (1.0 - self.alpha),
        }[self.family]

    @property
    def slope_at_infinity(self) -> float:
        """lim f(u)/u as u -> infinity."""
        return {
            FFamily.FAIRL: math.inf,
            FFamily.AIRL: 0.0,
            FFamily.GAIL: math.log(2.0),
            FFamily.ALPHA: 1.0 / self.alpha,
        }[self.family]

    def f_star(self, t: np.ndarray) -> np.ndarray:
        """Closed-form conjugate, without a domain check."""
        t = np.asarray(t, dtype=np.float64)
        if self.family is FFamily.FAIRL:
            return np.exp(t - 1.0)
        if self.family is FFamily.AIRL:
            return -1.0 - np.log(-t)
        if self.family is FFamily.GAIL:
            return -np.log(2.0 - np.exp(t))
        a = self.alpha
        return ((1.0 - a * t) ** ((a - 1.0) / a) - 1.0) / (1.0 - a)

    def f_star_prime(self, t: np.ndarray) -> np.ndarray:
        """Derivative of f*, equal to the u attaining the supremum."""
        t = np.asarray(t, dtype=np.float64)
        if self.family is FFamily.FAIRL:
            return np.exp(t - 1.0)
        if self.family is FFamily.AIRL:
            return -1.0 / t
        if self.family is FFamily.GAIL:
            e = np.exp(t)
            return e / (2.0 - e)
        a = self.alpha
        return (1.0 - a * t) ** (-1.0 / a)

    def clamp(self, t: np.ndarray, floor: float | None = None) -> tuple[np.ndarray, int]:
        """Clamp critic values into [floor, hi - margin]; returns values and clamp count."""
        numerics = get_settings().numerics
        low = -numerics.logit_clamp if floor is None else floor
        _, hi = self.conjugate_domain
        top = hi - numerics.conjugate_margin if math.isfinite(hi) else numerics.logit_clamp
        arr = np.asarray(t, dtype=np.float64)
        clipped = np.clip(arr, low, top)
        return clipped, int(np.count_nonzero(clipped != arr))


def f_conjugate(spec: FDivSpec, t: float) -> float:
    """Closed-form f*(t).

    Raises:
        DomainError: If t lies outside the conjugate domain.
    """
    if not bool(spec.in_domain(t)):
        raise DomainError(
            f"t={t} outside dom(f*) {spec.conjugate_domain} for {spec.name}",
            {"family": spec.name, "t": t},
        )
    return float(spec.f_star(t))


def numeric_conjugate(
    spec: FDivSpec,
    t: float,
    u_range: tuple[float, float] = (1e-8, 1e8),
    grid_size: int = 4001,
) -> float:
    """sup_u {u t - f(u)} over a log-spaced grid, refined by bounded scalar search."""
    log_u = np.linspace(math.log(u_range[0]), math.log(u_range[1]), grid_size)
    u = np.exp(log_u)
    values = u * t - spec.f(u)
    best = int(np.nanargmax(values))
    lo = log_u[max(best - 1, 0)]
    hi = log_u[min(best + 1, grid_size - 1)]

    def objective(x: float) -> float:
        w = math.exp(x)
        return -(w * t - float(spec.f(np.array(w))))

    result = minimize_scalar(
        objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12}
    )
    return max(float(values[best]), -float(result.fun))

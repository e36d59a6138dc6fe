"""Misfit penalties: plain two-norm and the heavy-tailed Student's t.

The two-norm is kept un-squared so that the misfit budget matches the
relative-error convention directly and the value function stays near-linear
for the outer Newton iteration.  The Student's t penalty
``sum_i log(nu + r_i^2)`` has a redescending influence function, which is
what lets it ignore gross outliers.

``rho_value`` returns the raw penalty (for Student's t, ``rho(0) = p log nu``);
``rho_misfit`` subtracts that constant so a zero misfit always means an exact
fit, which is the scale the misfit target eta lives on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GradientUndefinedError

TWO_NORM = "two_norm"
STUDENTS_T = "students_t"


@dataclass(frozen=True)
class Penalty:
    kind: str
    nu: float | None = None

    def __post_init__(self):
        if self.kind not in (TWO_NORM, STUDENTS_T):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if self.kind == STUDENTS_T:
            if self.nu is None or self.nu <= 0:
                raise ValueError("Student's t requires nu > 0")
        else:
            object.__setattr__(self, "nu", None)


def two_norm() -> Penalty:
    return Penalty(TWO_NORM)


def students_t(nu: float) -> Penalty:
    return Penalty(STUDENTS_T, float(nu))


def _check_finite(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64).ravel()
    if not np.all(np.isfinite(r)):
        raise ValueError("residual has non-finite entries")
    return r


def rho_value(penalty: Penalty, r) -> float:
    """Penalty value at residual ``r``."""
    r = _check_finite(r)
    if penalty.kind == TWO_NORM:
        return float(np.linalg.norm(r))
    return float(np.sum(np.log(penalty.nu + r * r)))


def misfit_offset(penalty: Penalty, p: int) -> float:
    """Value of the penalty at a zero residual of length ``p``."""
    if penalty.kind == STUDENTS_T:
        return p * math.log(penalty.nu)
    return 0.0


def rho_misfit(penalty: Penalty, r) -> float:
    """Shifted penalty that is 0 at an exact fit and positive otherwise."""
    r = _check_finite(r)
    if penalty.kind == TWO_NORM:
        return float(np.linalg.norm(r))
    # sum log(nu + r^2) - p log nu, computed stably
    return float(np.sum(np.log1p(r * r / penalty.nu)))


def rho_gradient(penalty: Penalty, r) -> np.ndarray:
    """Gradient of the penalty at ``r``.

    Raises GradientUndefinedError for the two-norm at ``r = 0``; callers
    treat that residual as an already-solved subproblem.
    """
    r = _check_finite(r)
    if penalty.kind == TWO_NORM:
        norm = float(np.linalg.norm(r))
        if norm == 0.0:
            raise GradientUndefinedError("two-norm gradient undefined at zero residual")
        return r / norm
    return 2.0 * r / (penalty.nu + r * r)


__all__ = [
    "Penalty",
    "two_norm",
    "students_t",
    "rho_value",
    "rho_misfit",
    "rho_gradient",
    "misfit_offset",
    "TWO_NORM",
    "STUDENTS_T",
]

"""Projections onto the constraint balls used by the subproblem solver.

* Frobenius surrogate ball: one scalar rescaling of both factors.
* Weighted surrogate ball: closed form in the two invariant subspaces, with
  the Lagrange multiplier found by a bracketed Newton iteration.
* Nuclear-norm ball: exact SVD plus a simplex projection of the singular
  values; kept as the reference oracle for the factored path.

Everything here is a pure function; array-level helpers (underscore names)
skip FactorPair validation for use inside solver loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FactorPair
from .errors import ProjectionError

_MU_MAX_ITERS = 100
_MU_REL_TOL = 1e-10


def _pair_surrogate(l: np.ndarray, r: np.ndarray) -> float:
    return 0.5 * (float(np.dot(l.ravel(), l.ravel())) + float(np.dot(r.ravel(), r.ravel())))


def _project_frobenius_arrays(l, r, tau):
    g = _pair_surrogate(l, r)
    if g <= tau:
        return l, r
    c = np.sqrt(tau / g)
    return c * l, c * r


def project_frobenius_ball(fp: FactorPair, tau: float) -> FactorPair:
    """Project onto ``0.5 (||L||_F^2 + ||R||_F^2) <= tau``.

    Inside the ball the pair is returned unchanged; outside, both factors
    are rescaled by the single value ``sqrt(tau / surrogate)``, which is the
    Euclidean-nearest feasible point.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    l, r = _project_frobenius_arrays(fp.left, fp.right, tau)
    if l is fp.left:
        return fp
    return FactorPair(l, r)


def project_l1_simplex(sigma, tau: float) -> np.ndarray:
    """Euclidean projection of a non-negative vector onto ``{x >= 0, sum x <= tau}``.

    Sort-based closed form: subtract the uniform shift that makes the
    positive part sum to ``tau``, clip at zero.
    """
    sigma = np.asarray(sigma, dtype=np.float64).ravel()
    if np.any(sigma < 0):
        raise ValueError("input must be non-negative")
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if sigma.sum() <= tau:
        return sigma.copy()
    if tau == 0.0:
        return np.zeros_like(sigma)
    srt = np.sort(sigma)[::-1]
    csum = np.cumsum(srt) - tau
    counts = np.arange(1, sigma.size + 1)
    support = srt - csum / counts > 0
    rho = int(np.nonzero(support)[0].max()) + 1
    theta = csum[rho - 1] / rho
    return np.maximum(sigma - theta, 0.0)


def project_nuclear_ball(x: np.ndarray, tau: float) -> np.ndarray:
    """Project a dense matrix onto ``||X||_* <= tau`` via an exact SVD."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    if s.sum() <= tau:
        return x.copy()
    s_proj = project_l1_simplex(s, tau)
    return (u * s_proj) @ vt


@dataclass(frozen=True)
class WeightedBallSpec:
    """Radius and subspace weights for the weighted surrogate ball.

    ``row_basis`` (n-by-k) and ``col_basis`` (m-by-k) must have orthonormal
    columns; ``omega`` in (0, 1] is the shrink factor applied inside the
    estimated subspaces.
    """

    tau: float
    row_basis: np.ndarray
    col_basis: np.ndarray
    omega: float

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0 < self.omega <= 1:
            raise ValueError("omega must be in (0, 1]")
        u = np.asarray(self.row_basis, dtype=np.float64)
        v = np.asarray(self.col_basis, dtype=np.float64)
        for name, basis in (("row_basis", u), ("col_basis", v)):
            gram = basis.T @ basis
            defect = np.abs(gram - np.eye(basis.shape[1])).max()
            if defect > 1e-10:
                raise ValueError(f"{name} columns not orthonormal (defect {defect:.2e})")
        object.__setattr__(self, "row_basis", u)
        object.__setattr__(self, "col_basis", v)


def _weighted_energies(l, r, u, v, omega):
    """Split the stacked energy into in-subspace and perpendicular parts."""
    utl = u.T @ l
    vtr = v.T @ r
    a = float(np.dot(utl.ravel(), utl.ravel()) + np.dot(vtr.ravel(), vtr.ravel()))
    total = float(np.dot(l.ravel(), l.ravel()) + np.dot(r.ravel(), r.ravel()))
    b = max(total - a, 0.0)
    return a, b, utl, vtr


def weighted_ball_value(l, r, u, v, omega) -> float:
    """Evaluate ``0.5 (||Q L||_F^2 + ||W R||_F^2)`` without forming Q or W."""
    a, b, _, _ = _weighted_energies(l, r, u, v, omega)
    return 0.5 * (omega**2 * a + b)


def _mu_root(a: float, b: float, omega: float, tau: float) -> float:
    """Solve ``f(mu) = tau`` for the weighted-projection multiplier.

    ``f(mu) = 0.5 [w^2 a / (1 + mu w^2)^2 + b / (1 + mu)^2]`` is convex and
    strictly decreasing for mu >= 0, so Newton from 0 converges monotonically;
    a bracketing bisection guards against rounding.
    """
    w2 = omega * omega

    def f(mu):
        return 0.5 * (w2 * a / (1.0 + mu * w2) ** 2 + b / (1.0 + mu) ** 2)

    def fprime(mu):
        return -(w2 * w2 * a / (1.0 + mu * w2) ** 3 + b / (1.0 + mu) ** 3)

    lo = 0.0
    hi = 1.0
    while f(hi) > tau:
        hi *= 2.0
        if hi > 1e300:
            raise ProjectionError("weighted projection bracket expansion failed")
    mu = 0.0
    val = f(mu)
    for _ in range(_MU_MAX_ITERS):
        if abs(val - tau) <= _MU_REL_TOL * tau:
            return mu
        step = fprime(mu)
        candidate = mu - (val - tau) / step if step < 0 else None
        if candidate is None or not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        mu = candidate
        val = f(mu)
        if val > tau:
            lo = mu
        else:
            hi = mu
        if hi - lo <= np.finfo(float).eps * max(hi, 1.0):
            if abs(val - tau) <= 1e-8 * tau:
                return mu
            break
    raise ProjectionError("weighted projection multiplier did not converge")


def _project_weighted_arrays(l, r, u, v, omega, tau):
    if omega == 1.0:
        return _project_frobenius_arrays(l, r, tau)
    a, b, utl, vtr = _weighted_energies(l, r, u, v, omega)
    if 0.5 * (omega**2 * a + b) <= tau:
        return l, r
    mu = _mu_root(a, b, omega, tau)
    c_in = 1.0 / (1.0 + mu * omega * omega)
    c_out = 1.0 / (1.0 + mu)
    # thin products only: UU^T l never forms an n-by-n matrix
    pl = u @ utl
    pr = v @ vtr
    return c_in * pl + c_out * (l - pl), c_in * pr + c_out * (r - pr)


def project_weighted_frobenius_ball(fp: FactorPair, spec: WeightedBallSpec) -> FactorPair:
    """Project onto ``0.5 (||Q L||_F^2 + ||W R||_F^2) <= tau``.

    With ``omega = 1`` this reduces exactly to the unweighted projection.
    The returned point satisfies the constraint to 1e-10 relative in tau.
    """
    l, r = _project_weighted_arrays(
        fp.left, fp.right, spec.row_basis, spec.col_basis, spec.omega, spec.tau
    )
    if l is fp.left:
        return fp
    return FactorPair(l, r)


__all__ = [
    "project_frobenius_ball",
    "project_l1_simplex",
    "project_nuclear_ball",
    "WeightedBallSpec",
    "project_weighted_frobenius_ball",
    "weighted_ball_value",
]

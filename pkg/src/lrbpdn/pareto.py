"""Misfit-target driver: Newton root finding on the regularization budget.

The solver walks the value function ``v(tau)`` (optimal misfit for budget
``tau``) down to the user's target ``eta``: each outer step solves one
factored subproblem inexactly, evaluates the closed-form slope
``v'(tau) = -sigma_max(A* grad_rho(r))`` by power iteration, and takes a
safeguarded Newton step in ``tau``.  Subproblems warm-start from the
previous solution and factor rank can grow on the fly when the current rank
stalls above the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core import FactorPair, SolverConfig
from .errors import DerivativeUncertainError, UnsupportedOperatorError
from .operators import apply_adjoint, as_effective_sampling, product_shape
from .penalties import Penalty, rho_gradient, rho_misfit
from .projections import WeightedBallSpec
from .spg import (
    DenseSubproblemState,
    SubproblemState,
    frobenius_ball_projector,
    spg_solve,
    spg_solve_matrix,
    weighted_ball_projector,
)

_INIT_SURROGATE_FRACTION = 1e-4
_WARM_DITHER = 1e-5
_SIGMA_SEED = 20240915

STATUS_CONVERGED = "converged"
STATUS_BUDGET = "budget_exhausted"
STATUS_INFEASIBLE_RANK = "infeasible_rank"


@dataclass(frozen=True)
class CompletionProblem:
    """Measurement operator, data vector, and misfit penalty."""

    op: object
    b: np.ndarray
    penalty: Penalty

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64).ravel()
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @property
    def shape(self) -> tuple[int, int]:
        return product_shape(self.op)

    def zero_misfit(self) -> float:
        """Misfit of the zero solution (residual ``-b``)."""
        return rho_misfit(self.penalty, -self.b)


@dataclass(frozen=True)
class ParetoRecord:
    tau: float
    v: float
    v_prime: float | None
    inner_iterations: int
    factor_rank: int


@dataclass
class ParetoTrace:
    """Sampled value-function curve plus the run's final status."""

    records: list[ParetoRecord] = field(default_factory=list)
    status: str = STATUS_BUDGET

    def append(self, **kw):
        self.records.append(ParetoRecord(**kw))

    @property
    def tau_final(self) -> float:
        return self.records[-1].tau if self.records else 0.0

    @property
    def misfit_final(self) -> float:
        return self.records[-1].v if self.records else math.nan

    @property
    def inner_iterations_total(self) -> int:
        return sum(rec.inner_iterations for rec in self.records)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "records": [
                {
                    "tau": rec.tau,
                    "v": rec.v,
                    "v_prime": rec.v_prime,
                    "inner_iterations": rec.inner_iterations,
                    "factor_rank": rec.factor_rank,
                }
                for rec in self.records
            ],
        }


@dataclass(frozen=True)
class SigmaMaxEstimate:
    value: float
    converged: bool
    iterations: int


def _as_operator_pair(a):
    """Normalize matrix-like input to (matvec, rmatvec, (n, m))."""
    if isinstance(a, tuple) and len(a) == 3:
        return a
    if sp.issparse(a):
        return a.__matmul__, a.T.__matmul__, a.shape
    if hasattr(a, "matvec") and hasattr(a, "rmatvec"):
        return a.matvec, a.rmatvec, a.shape
    mat = np.asarray(a, dtype=np.float64)
    return mat.__matmul__, mat.T.__matmul__, mat.shape


def sigma_max(a, tol: float = 1e-8, max_iters: int = 1000, seed: int = _SIGMA_SEED) -> SigmaMaxEstimate:
    """Largest singular value by power iteration on ``G^T G``.

    Accepts a dense array, a scipy sparse matrix, an object with
    matvec/rmatvec, or a ``(matvec, rmatvec, shape)`` triple.  The start
    vector is drawn from a seeded generator, so estimates are deterministic.
    When ``max_iters`` is exhausted the best estimate is returned with
    ``converged=False``.
    """
    matvec, rmatvec, shape = _as_operator_pair(a)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape[1])
    vnorm = np.linalg.norm(v)
    if vnorm == 0:
        return SigmaMaxEstimate(0.0, True, 0)
    v /= vnorm
    estimate = 0.0
    for it in range(1, max_iters + 1):
        u = matvec(v)
        new_estimate = float(np.linalg.norm(u))
        if new_estimate == 0.0:
            return SigmaMaxEstimate(0.0, True, it)
        if abs(new_estimate - estimate) <= tol * new_estimate:
            return SigmaMaxEstimate(new_estimate, True, it)
        estimate = new_estimate
        w = rmatvec(u)
        wnorm = float(np.linalg.norm(w))
        if wnorm == 0.0:
            return SigmaMaxEstimate(estimate, True, it)
        v = w / wnorm
    return SigmaMaxEstimate(estimate, False, max_iters)


def _residual_gradient_operator(problem: CompletionProblem, residual, weights=None):
    """Build ``G = A*(grad rho(r))`` (optionally ``Q^-1 G W^-1``) as matvecs."""
    w = rho_gradient(problem.penalty, residual)
    shape = problem.shape
    try:
        sampler = as_effective_sampling(problem.op)
    except UnsupportedOperatorError:
        g = apply_adjoint(problem.op, w)
        matvec, rmatvec = g.__matmul__, g.T.__matmul__
    else:
        g = sp.csr_matrix(
            (w, (sampler.indices[:, 0], sampler.indices[:, 1])), shape=shape
        )
        gt = g.T.tocsr()
        matvec, rmatvec = g.__matmul__, gt.__matmul__

    if weights is None or weights.omega == 1.0:
        return matvec, rmatvec, shape

    u, v, om = weights.row_basis, weights.col_basis, weights.omega
    c = 1.0 / om - 1.0

    def row_inv(x):  # Q^{-1} x
        return x + c * (u @ (u.T @ x))

    def col_inv(x):  # W^{-1} x
        return x + c * (v @ (v.T @ x))

    def weighted_matvec(x):
        return row_inv(matvec(col_inv(x)))

    def weighted_rmatvec(y):
        return col_inv(rmatvec(row_inv(y)))

    return weighted_matvec, weighted_rmatvec, shape


def gaussian_init(shape, k, target_surrogate, seed) -> FactorPair:
    """Small Gaussian factors scaled to the requested surrogate value."""
    n, m = shape
    rng = np.random.default_rng(seed)
    l = rng.standard_normal((n, k))
    r = rng.standard_normal((m, k))
    raw = 0.5 * (np.sum(l * l) + np.sum(r * r))
    c = math.sqrt(target_surrogate / raw) if raw > 0 else 0.0
    return FactorPair(c * l, c * r)


def _dither(fp: FactorPair, seed, scale: float = _WARM_DITHER) -> FactorPair:
    """Tiny Gaussian perturbation of a warm start.

    Gradient flow preserves exactly-zero factor columns, so a warm start
    whose effective rank collapsed at a smaller budget would be trapped at
    that rank forever.  The dither re-seeds dead directions; its scale must
    keep the squared-distance decrease available at a saddle (~ dither^2)
    above float noise, and it washes out once the subproblem re-converges.
    """
    base = math.sqrt(float(np.sum(fp.left**2) + np.sum(fp.right**2)))
    if base == 0.0:
        return fp
    rng = np.random.default_rng(seed)
    nl = rng.standard_normal(fp.left.shape)
    nr = rng.standard_normal(fp.right.shape)
    joint = math.sqrt(float(np.sum(nl * nl) + np.sum(nr * nr)))
    c = scale * base / joint
    return FactorPair(fp.left + c * nl, fp.right + c * nr)


def evaluate_value_function(
    tau: float,
    warm: FactorPair | None,
    problem: CompletionProblem,
    *,
    tol: float = 1e-6,
    max_iters: int = 5000,
    factor_rank: int | None = None,
    seed: int = 0,
    memory: int = 10,
    weights=None,
    trace_sink=None,
    dither: float = _WARM_DITHER,
):
    """Evaluate ``v(tau)`` inexactly; returns ``(v, SubproblemState)``.

    ``v`` is on the shifted misfit scale (zero means exact fit).  The solve
    warm-starts from ``warm`` projected into the ball when given, otherwise
    from seeded Gaussian factors well inside the ball.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    shape = problem.shape
    if warm is not None and warm.surrogate() == 0.0 and tau > 0:
        warm = None  # the zero pair is a stationary point; restart fresh
    if warm is None:
        k = factor_rank if factor_rank is not None else 1
        warm = gaussian_init(shape, k, _INIT_SURROGATE_FRACTION * max(tau, 1e-300), seed)
    elif tau > 0 and dither > 0:
        warm = _dither(warm, [seed, 257], dither)
    if weights is None or weights.omega == 1.0:
        projector = frobenius_ball_projector(tau)
    else:
        projector = weighted_ball_projector(
            WeightedBallSpec(tau, weights.row_basis, weights.col_basis, weights.omega)
        )
    state = spg_solve(
        problem.op,
        problem.b,
        problem.penalty,
        projector,
        warm,
        tol,
        max_iters,
        memory=memory,
        trace_sink=trace_sink,
    )
    v = rho_misfit(problem.penalty, state.residual)
    return v, state


def evaluate_derivative(
    solution: SubproblemState,
    problem: CompletionProblem,
    *,
    weights=None,
    tol: float = 1e-8,
    max_iters: int = 1000,
) -> float:
    """Closed-form value-function slope ``-sigma_max(A* grad rho(r))``.

    For the weighted problem the slope is ``-sigma_max(Q^-1 G W^-1)``.
    Raises DerivativeUncertainError when the power iteration does not
    converge; the root finder then falls back to a secant slope.
    """
    residual = solution.residual
    if float(np.linalg.norm(residual)) == 0.0:
        raise ValueError("derivative undefined at zero residual (root already found)")
    est = sigma_max(
        _residual_gradient_operator(problem, residual, weights), tol=tol, max_iters=max_iters
    )
    if not est.converged:
        raise DerivativeUncertainError(
            f"power iteration stalled at {est.value:.6e} after {est.iterations} iterations"
        )
    return -est.value


def increase_rank(fp: FactorPair, delta_k: int, *, scale: float = 1e-6, seed: int = 0) -> FactorPair:
    """Append ``delta_k`` Gaussian columns of joint norm ``scale * ||[L; R]||_F``.

    The product is perturbed by at most the new columns' outer products, so
    the iterate is essentially preserved while the search space grows.
    """
    if delta_k < 1:
        raise ValueError("delta_k must be >= 1")
    rng = np.random.default_rng(seed)
    n, m = fp.n, fp.m
    new_l = rng.standard_normal((n, delta_k))
    new_r = rng.standard_normal((m, delta_k))
    joint = math.sqrt(float(np.sum(new_l * new_l) + np.sum(new_r * new_r)))
    base = math.sqrt(float(np.sum(fp.left**2) + np.sum(fp.right**2)))
    c = scale * base / joint if joint > 0 else 0.0
    return FactorPair(
        np.hstack([fp.left, c * new_l]), np.hstack([fp.right, c * new_r])
    )


def _zero_solution(problem: CompletionProblem, k: int) -> FactorPair:
    n, m = problem.shape
    return FactorPair(np.zeros((n, k)), np.zeros((m, k)))


def solve_bpdn(
    eta: float,
    problem: CompletionProblem,
    config: SolverConfig,
    *,
    weights=None,
    trace_sink=None,
):
    """Solve the misfit-target problem: hit ``rho(A(L R^T) - b) = eta``.

    ``eta`` is absolute, on the shifted misfit scale (see
    ``data.eta_absolute`` for the relative conversion).  Returns
    ``(FactorPair, ParetoTrace)``; the trace status reports convergence,
    budget exhaustion, or a factor rank too small to reach the target.
    """
    if eta < 0:
        raise ValueError("eta must be non-negative")
    trace = ParetoTrace()
    misfit0 = problem.zero_misfit()
    k = config.factor_rank

    if eta >= misfit0:
        trace.append(tau=0.0, v=misfit0, v_prime=None, inner_iterations=0, factor_rank=k)
        trace.status = STATUS_CONVERGED
        return _zero_solution(problem, k), trace

    band = config.root_tolerance * (eta if eta > 0 else 1e-8 * misfit0)
    max_rank = min(problem.shape)
    data_energy = float(np.dot(problem.b, problem.b))
    tau = _INIT_SURROGATE_FRACTION * data_energy
    warm = gaussian_init(problem.shape, k, tau, config.seed)

    budget = config.max_inner_spg_iterations
    best: tuple[float, FactorPair] | None = None
    prev_point: tuple[float, float] | None = None  # (tau, v) of previous record
    stall_count = 0
    bracket = None  # (tau_lo, v_lo, tau_hi, v_hi) once the root is straddled
    grow_seed = config.seed

    last_v = misfit0
    for step in range(config.max_outer_newton_steps):
        tol = config.inner_tolerance(step)
        # near the target the dither's product perturbation rivals eta and
        # ruins the warm start; rank activation is settled by then
        dither = _WARM_DITHER if last_v > 100.0 * eta else 0.0
        v, state = evaluate_value_function(
            tau,
            warm,
            problem,
            tol=tol,
            max_iters=max(budget, 1),
            seed=config.seed + step,
            memory=config.line_search_memory,
            weights=weights,
            trace_sink=trace_sink,
            dither=dither,
        )
        last_v = v
        budget -= state.iterations_used
        warm = state.factors
        if best is None or abs(v - eta) < abs(best[0] - eta):
            best = (v, state.factors)

        if abs(v - eta) <= band:
            trace.append(tau=tau, v=v, v_prime=None, inner_iterations=state.iterations_used, factor_rank=warm.k)
            trace.status = STATUS_CONVERGED
            return state.factors, trace

        v_prime = None
        if v > eta:
            try:
                v_prime = evaluate_derivative(state, problem, weights=weights)
            except DerivativeUncertainError:
                v_prime = None
        trace.append(tau=tau, v=v, v_prime=v_prime, inner_iterations=state.iterations_used, factor_rank=warm.k)

        if budget <= 0:
            trace.status = STATUS_BUDGET
            return best[1], trace

        if v < eta:
            # overshot the target: bracket the root and interpolate back
            if prev_point is not None and prev_point[1] > eta:
                bracket = (prev_point[0], prev_point[1], tau, v)
            else:
                bracket = (0.0, misfit0, tau, v)

        if bracket is not None:
            tau_lo, v_lo, tau_hi, v_hi = bracket
            if v > eta and tau > tau_lo:
                tau_lo, v_lo = tau, v
            elif v < eta and tau < tau_hi:
                tau_hi, v_hi = tau, v
            span = v_lo - v_hi
            tau_next = (
                tau_lo + (v_lo - eta) * (tau_hi - tau_lo) / span
                if span > 0
                else 0.5 * (tau_lo + tau_hi)
            )
            if not tau_lo < tau_next < tau_hi:
                tau_next = 0.5 * (tau_lo + tau_hi)
            bracket = (tau_lo, v_lo, tau_hi, v_hi)
            prev_point = (tau, v)
            tau = tau_next
            continue

        # rank-growth / infeasibility bookkeeping: a tau update counts as
        # stalled when it closed almost none of the remaining gap to eta
        # (near the root the absolute decrease shrinks by design)
        if (
            state.converged
            and prev_point is not None
            and prev_point[1] > eta
            and prev_point[1] - v < config.rank_growth_threshold * (prev_point[1] - eta)
            and v > eta + band
        ):
            stall_count += 1
            if config.rank_growth > 0 and warm.k < max_rank:
                new_k = min(warm.k + config.rank_growth, max_rank)
                warm = increase_rank(warm, new_k - warm.k, seed=grow_seed)
                grow_seed += 1
                stall_count = 0
            elif stall_count >= 2:
                trace.status = STATUS_INFEASIBLE_RANK
                return best[1], trace
        else:
            stall_count = 0

        # safeguarded Newton step in tau: the update must increase tau.
        # In the rank-constrained regime the dual-norm slope overestimates
        # the curve's steepness, so prefer the shallower of the closed-form
        # and secant slopes; an overshoot lands in the bracket branch above.
        # The step never aims below a decade drop in v: inexact solves
        # overestimate v, and a full jump from far above the root lands deep
        # past it on overfitted iterates.
        slope = v_prime if (v_prime is not None and v_prime < 0) else None
        if prev_point is not None and prev_point[1] > v and tau > prev_point[0]:
            secant = (v - prev_point[1]) / (tau - prev_point[0])
            if slope is None or secant > slope:
                slope = secant
        if slope is not None and slope < 0:
            target = max(eta, 0.25 * v)
            tau_next = tau - (v - target) / slope
        else:
            tau_next = 2.0 * tau
        if not np.isfinite(tau_next) or tau_next <= tau:
            tau_next = 2.0 * tau
        prev_point = (tau, v)
        tau = tau_next

    trace.status = STATUS_BUDGET
    return (best[1] if best is not None else warm), trace


def convex_value_function(
    tau: float,
    problem: CompletionProblem,
    *,
    tol: float = 1e-8,
    max_iters: int = 5000,
    warm_x: np.ndarray | None = None,
    seed: int = 0,
    memory: int = 10,
):
    """Reference ``v(tau)`` from the dense matrix variable and SVD projection.

    Used by the oracle-equivalence checks; returns ``(v, DenseSubproblemState)``.
    """
    shape = problem.shape
    if warm_x is None:
        rng = np.random.default_rng(seed)
        x0 = rng.standard_normal(shape)
        x0 *= _INIT_SURROGATE_FRACTION * max(tau, 1e-300) / np.linalg.svd(x0, compute_uv=False).sum()
    else:
        x0 = warm_x
    state = spg_solve_matrix(
        problem.op, problem.b, problem.penalty, tau, x0, tol, max_iters, memory=memory
    )
    v = rho_misfit(problem.penalty, state.residual)
    return v, state


__all__ = [
    "CompletionProblem",
    "ParetoRecord",
    "ParetoTrace",
    "SigmaMaxEstimate",
    "sigma_max",
    "gaussian_init",
    "evaluate_value_function",
    "evaluate_derivative",
    "increase_rank",
    "solve_bpdn",
    "convex_value_function",
    "STATUS_CONVERGED",
    "STATUS_BUDGET",
    "STATUS_INFEASIBLE_RANK",
]

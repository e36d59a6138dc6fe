"""Subspace re-weighting: shrink the penalty along estimated row/column spaces.

Given orthonormal estimates ``U`` (n-by-k) and ``V`` (m-by-k) of the row and
column spaces of the unknown matrix, the weighting operators
``Q = w U U^T + (I - U U^T)`` and ``W = w V V^T + (I - V V^T)`` with
``w in (0, 1]`` make directions inside the estimated subspaces cheaper for
the regularizer.  All applications use two thin products; no n-by-n matrix
is ever formed.

``frequency_continuation`` chains solves over an ordered slice stack,
feeding each slice the subspaces extracted from the previous solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import FactorPair, Observations, SolverConfig
from .errors import ShapeMismatchError
from .operators import SamplingOp
from .pareto import CompletionProblem, ParetoTrace, solve_bpdn
from .penalties import rho_misfit, two_norm

_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class SubspaceWeights:
    """Orthonormal row/column subspace estimates plus the shrink factor."""

    row_basis: np.ndarray
    col_basis: np.ndarray
    omega: float

    def __post_init__(self):
        if not 0 < self.omega <= 1:
            raise ValueError("omega must be in (0, 1]")
        u = np.asarray(self.row_basis, dtype=np.float64)
        v = np.asarray(self.col_basis, dtype=np.float64)
        for name, basis in (("row_basis", u), ("col_basis", v)):
            if basis.ndim != 2:
                raise ValueError(f"{name} must be 2-d")
            defect = np.abs(basis.T @ basis - np.eye(basis.shape[1])).max()
            if defect > _ORTHO_TOL:
                raise ValueError(f"{name} columns not orthonormal (defect {defect:.2e})")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "row_basis", u)
        object.__setattr__(self, "col_basis", v)


def apply_weight(weights: SubspaceWeights, side: str, m: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Apply Q (side="row", as ``Q M``) or W (side="col", as ``M W``).

    With ``inverse=True`` applies the exact inverse.  The computation is
    ``M + (w - 1) U (U^T M)`` (or the column analogue), two thin products.
    ``omega = 1`` returns the input unchanged.
    """
    m = np.asarray(m, dtype=np.float64)
    om = weights.omega
    if om == 1.0:
        return m
    c = (1.0 / om - 1.0) if inverse else (om - 1.0)
    if side == "row":
        u = weights.row_basis
        if m.shape[0] != u.shape[0]:
            raise ShapeMismatchError(f"expected {u.shape[0]} rows, got {m.shape[0]}")
        return m + c * (u @ (u.T @ m))
    if side == "col":
        v = weights.col_basis
        if m.shape[1] != v.shape[0]:
            raise ShapeMismatchError(f"expected {v.shape[0]} cols, got {m.shape[1]}")
        return m + c * ((m @ v) @ v.T)
    raise ValueError(f"side must be 'row' or 'col', got {side!r}")


class SubspaceBasis(NamedTuple):
    row_basis: np.ndarray
    col_basis: np.ndarray
    rank_deficient: bool


def extract_subspaces(fp: FactorPair, k_keep: int) -> SubspaceBasis:
    """Leading singular subspaces of ``L R^T`` computed without forming it.

    QR-factor both factors, SVD the small k-by-k core, lift back.  When the
    numerical rank of the product falls below ``k_keep``, the available
    columns are returned and ``rank_deficient`` is set.
    """
    if k_keep < 1 or k_keep > fp.k:
        raise ValueError(f"k_keep must be in [1, {fp.k}]")
    ql, rl = np.linalg.qr(fp.left)
    qr_, rr = np.linalg.qr(fp.right)
    core = rl @ rr.T
    u_s, s, vt_s = np.linalg.svd(core)
    if s.size == 0 or s[0] == 0.0:
        available = 0
    else:
        cutoff = s[0] * max(fp.n, fp.m) * np.finfo(float).eps
        available = int(np.count_nonzero(s > cutoff))
    keep = min(k_keep, available)
    return SubspaceBasis(
        row_basis=ql @ u_s[:, :keep],
        col_basis=qr_ @ vt_s[:keep].T,
        rank_deficient=keep < k_keep,
    )


def solve_weighted_bpdn(
    eta: float,
    weights: SubspaceWeights,
    problem: CompletionProblem,
    config: SolverConfig,
    *,
    trace_sink=None,
) -> tuple[FactorPair, ParetoTrace]:
    """Misfit-target solve under the weighted surrogate ball.

    Same contract as :func:`lrbpdn.pareto.solve_bpdn`; subproblems project
    onto the weighted ball and the Newton slope uses the weighted dual norm.
    ``omega = 1`` runs the unweighted path bit-for-bit.
    """
    if weights.omega == 1.0:
        return solve_bpdn(eta, problem, config, trace_sink=trace_sink)
    return solve_bpdn(eta, problem, config, weights=weights, trace_sink=trace_sink)


@dataclass(frozen=True)
class SliceStack:
    """Ordered stack of (label, observations, optional truth) slices."""

    labels: tuple
    observations: tuple
    truths: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        obs = tuple(self.observations)
        truths = tuple(self.truths)
        if not labels:
            raise ValueError("stack must contain at least one slice")
        if not (len(labels) == len(obs) == len(truths)):
            raise ValueError("labels, observations, and truths must align")
        if any(b <= a for a, b in zip(labels, labels[1:])):
            raise ValueError("labels must be strictly increasing")
        shapes = {o.shape for o in obs}
        if len(shapes) != 1:
            raise ValueError("all slices must share one shape")
        for t in truths:
            if t is not None and t.shape != obs[0].shape:
                raise ValueError("truth shape differs from observation shape")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "truths", truths)

    def __len__(self):
        return len(self.labels)


def _slice_problem(obs: Observations) -> CompletionProblem:
    return CompletionProblem(SamplingOp(obs.shape, obs.indices), obs.values, two_norm())


def frequency_continuation(
    stack: SliceStack,
    eta_rel,
    omega: float,
    config: SolverConfig,
    *,
    k_keep: int | None = None,
):
    """Solve a slice stack in order, re-weighting each slice with the
    previous solution's subspaces.

    The first slice is solved unweighted.  Every later slice is solved both
    weighted (subspaces from the previous weighted solution) and unweighted
    for comparison; the weighted solution propagates.  A failed weighted
    solve is recorded and the slice falls back to its unweighted solution.

    ``eta_rel`` is a relative misfit target (scalar or one per slice).
    Returns ``(solutions, report)`` where the report holds one dict per run:
    {label, snr_db, eta, tau_final, rank, weighted, inner_iterations,
    status}.
    """
    from .data import snr_db  # local import; data also consumes SliceStack

    count = len(stack)
    etas = np.broadcast_to(np.asarray(eta_rel, dtype=np.float64), (count,))
    keep = k_keep if k_keep is not None else config.factor_rank
    report = []
    solutions = []
    previous: FactorPair | None = None

    def run(problem, eta_abs, weights):
        if weights is None:
            return solve_bpdn(eta_abs, problem, config)
        return solve_weighted_bpdn(eta_abs, weights, problem, config)

    def row(label, eta_abs, fp, trace, weighted, truth):
        entry = {
            "label": label,
            "snr_db": None,
            "eta": eta_abs,
            "tau_final": trace.tau_final,
            "rank": fp.k,
            "weighted": weighted,
            "inner_iterations": trace.inner_iterations_total,
            "status": trace.status,
        }
        if truth is not None:
            entry["snr_db"] = snr_db(truth, fp.product())
        return entry

    for i in range(count):
        label = stack.labels[i]
        obs = stack.observations[i]
        truth = stack.truths[i]
        problem = _slice_problem(obs)
        eta_abs = float(etas[i]) * rho_misfit(problem.penalty, -problem.b)

        fp_plain, trace_plain = run(problem, eta_abs, None)
        report.append(row(label, eta_abs, fp_plain, trace_plain, False, truth))
        chosen = fp_plain

        if i > 0 and previous is not None and omega < 1.0:
            try:
                basis = extract_subspaces(previous, min(keep, previous.k))
                weights = SubspaceWeights(basis.row_basis, basis.col_basis, omega)
                fp_w, trace_w = run(problem, eta_abs, weights)
            except (ValueError, RuntimeError) as exc:
                report.append(
                    {
                        "label": label,
                        "snr_db": None,
                        "eta": eta_abs,
                        "tau_final": None,
                        "rank": None,
                        "weighted": True,
                        "inner_iterations": 0,
                        "status": f"error: {exc}",
                    }
                )
            else:
                report.append(row(label, eta_abs, fp_w, trace_w, True, truth))
                chosen = fp_w

        solutions.append(chosen)
        previous = chosen

    return solutions, report


__all__ = [
    "SubspaceWeights",
    "SubspaceBasis",
    "apply_weight",
    "extract_subspaces",
    "solve_weighted_bpdn",
    "SliceStack",
    "frequency_continuation",
]

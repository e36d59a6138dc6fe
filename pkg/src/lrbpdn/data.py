"""Synthetic instances, masks, contamination, metrics, and triplet ingestion.

Every generator is deterministic under its seed.  Sample counts round down
(``floor(fraction * total)``).  The relative misfit convention lives here:
an absolute target is ``eta_rel`` times the misfit of the zero solution, so
solvers only ever see absolute targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Observations
from .errors import TripletParseError, UndefinedMetricError
from .penalties import Penalty, rho_misfit
from .weighting import SliceStack


@dataclass(frozen=True)
class InstanceSpec:
    """Recipe for one synthetic completion instance."""

    n: int
    m: int
    true_rank: int
    sampling_fraction: float = 1.0
    contamination_fraction: float = 0.0
    contamination_amplitude_multiplier: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.sampling_fraction <= 1:
            raise ValueError("sampling_fraction must be in [0, 1]")
        if not 0 <= self.contamination_fraction <= 1:
            raise ValueError("contamination_fraction must be in [0, 1]")


def gen_low_rank(n: int, m: int, k: int, seed: int) -> np.ndarray:
    """Product of two i.i.d. standard Gaussian factors; exact rank ``k``."""
    if k > min(n, m):
        raise ValueError("rank cannot exceed min(n, m)")
    if k == 0:
        return np.zeros((n, m))
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, k)) @ rng.standard_normal((m, k)).T


def gen_mask(shape, mode: str, fraction: float, seed: int) -> np.ndarray:
    """Retained-entry mask as a (p, 2) index array, row-major ordered.

    mode "entries" keeps floor(fraction * n * m) uniformly random cells;
    mode "columns" keeps floor(fraction * m) full columns (shot removal).
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must be in [0, 1]")
    n, m = int(shape[0]), int(shape[1])
    rng = np.random.default_rng(seed)
    if mode == "entries":
        total = n * m
        p = int(math.floor(fraction * total))
        flat = rng.choice(total, size=p, replace=False)
        flat.sort()
        return np.column_stack([flat // m, flat % m]).astype(np.int64)
    if mode == "columns":
        ncols = int(math.floor(fraction * m))
        cols = np.sort(rng.choice(m, size=ncols, replace=False))
        rows = np.repeat(np.arange(n), ncols)
        return np.column_stack([rows, np.tile(cols, n)]).astype(np.int64)
    raise ValueError(f"mode must be 'entries' or 'columns', got {mode!r}")


def observe(x: np.ndarray, mask: np.ndarray) -> Observations:
    """Gather the masked entries of a dense matrix into Observations."""
    x = np.asarray(x, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.int64).reshape(-1, 2)
    return Observations(x.shape, mask, x[mask[:, 0], mask[:, 1]])


def contaminate(
    obs: Observations,
    fraction: float,
    multiplier: float,
    mode: str = "columns",
    seed: int = 0,
) -> tuple[Observations, np.ndarray]:
    """Replace a fraction of the retained columns (or entries) with noise.

    Replacement values are uniform on ``[-M, M]`` with
    ``M = multiplier * max|b|`` taken over the original values.  Returns the
    contaminated observations plus the affected (row, col) pairs; solvers
    never see that index set, it exists for evaluation only.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must be in [0, 1]")
    values = obs.values.copy()
    if obs.count == 0 or fraction == 0.0:
        return obs, np.empty((0, 2), dtype=np.int64)
    rng = np.random.default_rng(seed)
    amplitude = multiplier * float(np.max(np.abs(obs.values)))
    if mode == "columns":
        retained = np.unique(obs.cols())
        ncont = int(math.floor(fraction * retained.size))
        chosen = rng.choice(retained, size=ncont, replace=False)
        hit = np.isin(obs.cols(), chosen)
    elif mode == "entries":
        ncont = int(math.floor(fraction * obs.count))
        positions = rng.choice(obs.count, size=ncont, replace=False)
        hit = np.zeros(obs.count, dtype=bool)
        hit[positions] = True
    else:
        raise ValueError(f"mode must be 'columns' or 'entries', got {mode!r}")
    values[hit] = rng.uniform(-amplitude, amplitude, size=int(hit.sum()))
    return (
        Observations(obs.shape, obs.indices, values),
        obs.indices[hit].copy(),
    )


def gen_correlated_slices(
    n: int,
    m: int,
    k: int,
    count: int,
    drift: float,
    seed: int,
    *,
    sampling_fraction: float = 1.0,
    mask_mode: str = "entries",
) -> SliceStack:
    """Stack of low-rank slices whose subspaces drift slowly.

    Slice i's factors are slice i-1's plus a Gaussian perturbation of
    relative Frobenius size ``drift``, re-normalized to the base energy;
    drift 0 reproduces the first slice exactly.  Each slice is observed
    through its own deterministic mask.
    """
    if not 0 <= drift <= 1:
        raise ValueError("drift must be in [0, 1]")
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng([seed, 0])
    l = rng.standard_normal((n, k))
    r = rng.standard_normal((m, k))
    base_l = float(np.linalg.norm(l))
    base_r = float(np.linalg.norm(r))

    labels, observations, truths = [], [], []
    for i in range(count):
        if i > 0 and drift > 0:
            step_rng = np.random.default_rng([seed, i])
            dl = step_rng.standard_normal((n, k))
            dr = step_rng.standard_normal((m, k))
            l = l + drift * base_l * dl / np.linalg.norm(dl)
            r = r + drift * base_r * dr / np.linalg.norm(dr)
            l *= base_l / np.linalg.norm(l)
            r *= base_r / np.linalg.norm(r)
        truth = l @ r.T
        mask = gen_mask((n, m), mask_mode, sampling_fraction, seed=int(seed) + 7919 * (i + 1))
        labels.append(float(i))
        observations.append(observe(truth, mask))
        truths.append(truth)
    return SliceStack(tuple(labels), tuple(observations), tuple(truths))


def snr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    """``20 log10(||A||_F / ||P - A||_F)``; +inf for an exact match."""
    a = np.asarray(reference, dtype=np.float64)
    p = np.asarray(estimate, dtype=np.float64)
    if a.shape != p.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {p.shape}")
    ref_norm = float(np.linalg.norm(a))
    if ref_norm == 0.0:
        raise UndefinedMetricError("SNR undefined for a zero reference")
    err = float(np.linalg.norm(p - a))
    if err == 0.0:
        return math.inf
    return 20.0 * math.log10(ref_norm / err)


def eta_absolute(eta_rel: float, penalty: Penalty, b: np.ndarray) -> float:
    """Absolute misfit target: ``eta_rel`` times the zero-solution misfit."""
    if eta_rel < 0:
        raise ValueError("eta_rel must be non-negative")
    return eta_rel * rho_misfit(penalty, -np.asarray(b, dtype=np.float64))


def load_triplets_csv(path, shape=None) -> Observations:
    """Read "row,col,value" triplets (zero-based indices).

    The shape is inferred from the maxima when not supplied.  Parse errors
    carry the offending line number; duplicate indices are rejected.
    """
    rows, cols, vals = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise TripletParseError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                rows.append(int(parts[0]))
                cols.append(int(parts[1]))
                vals.append(float(parts[2]))
            except ValueError as exc:
                raise TripletParseError(f"{path}:{lineno}: {exc}") from None
    if not rows and shape is None:
        raise TripletParseError(f"{path}: empty file and no shape supplied")
    if shape is None:
        shape = (max(rows) + 1, max(cols) + 1)
    return Observations(shape, np.column_stack([rows, cols]) if rows else np.empty((0, 2), dtype=np.int64), np.asarray(vals))


def make_instance(spec: InstanceSpec, mask_mode: str = "entries", contamination_mode: str = "columns"):
    """Build (truth, observations, contaminated_positions) from a spec.

    Sub-seeds derive from spec.seed: truth uses [seed, 0], the mask
    [seed, 1], contamination [seed, 2] via the generator seed-sequence
    mechanism, so instances are reproducible component by component.
    """
    truth_seed = np.random.default_rng([spec.seed, 0]).integers(2**31)
    mask_seed = np.random.default_rng([spec.seed, 1]).integers(2**31)
    cont_seed = np.random.default_rng([spec.seed, 2]).integers(2**31)
    truth = gen_low_rank(spec.n, spec.m, spec.true_rank, int(truth_seed))
    mask = gen_mask((spec.n, spec.m), mask_mode, spec.sampling_fraction, int(mask_seed))
    obs = observe(truth, mask)
    contaminated = np.empty((0, 2), dtype=np.int64)
    if spec.contamination_fraction > 0:
        obs, contaminated = contaminate(
            obs,
            spec.contamination_fraction,
            spec.contamination_amplitude_multiplier,
            mode=contamination_mode,
            seed=int(cont_seed),
        )
    return truth, obs, contaminated


__all__ = [
    "InstanceSpec",
    "gen_low_rank",
    "gen_mask",
    "observe",
    "contaminate",
    "gen_correlated_slices",
    "snr_db",
    "eta_absolute",
    "load_triplets_csv",
    "make_instance",
]

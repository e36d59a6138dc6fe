"""Core value types: low-rank factor pairs, sparse observations, solver knobs.

A dense matrix is a plain 2-d float64 ndarray throughout the package; the
low-rank decision variable is a :class:`FactorPair` ``(L, R)`` standing for
the product ``L @ R.T`` without ever forming it unless asked.  All types here
are frozen after construction (arrays are marked read-only), so they can be
shared freely between threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidFactorError

_MAGIC = b"PCMX"
_HEADER = struct.Struct("<4sII4x")  # magic, rows, cols, 4 reserved bytes


def as_dense_matrix(a) -> np.ndarray:
    """Coerce ``a`` to a read-only 2-d float64 array, validating finiteness."""
    m = np.array(a, dtype=np.float64, order="C")
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidFactorError(f"expected a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidFactorError("matrix has non-finite entries")
    m.setflags(write=False)
    return m


@dataclass(frozen=True)
class FactorPair:
    """Low-rank factors ``(L, R)`` representing ``X = L @ R.T``.

    ``L`` is n-by-k, ``R`` is m-by-k.  The Frobenius surrogate
    ``0.5 * (||L||_F^2 + ||R||_F^2)`` upper-bounds the nuclear norm of the
    product, with equality at a balanced SVD split.
    """

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "left", as_dense_matrix(self.left))
        object.__setattr__(self, "right", as_dense_matrix(self.right))
        if self.left.shape[1] != self.right.shape[1]:
            raise InvalidFactorError(
                f"factor column counts differ: L is {self.left.shape}, "
                f"R is {self.right.shape}"
            )

    @property
    def n(self) -> int:
        return self.left.shape[0]

    @property
    def m(self) -> int:
        return self.right.shape[0]

    @property
    def k(self) -> int:
        return self.left.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.m)

    def product(self) -> np.ndarray:
        return form_product(self)

    def surrogate(self) -> float:
        return frobenius_surrogate(self)


def form_product(fp: FactorPair) -> np.ndarray:
    """Form the dense n-by-m product ``L @ R.T``."""
    return fp.left @ fp.right.T


def frobenius_surrogate(fp: FactorPair) -> float:
    """Return ``0.5 * (||L||_F^2 + ||R||_F^2)``, the factored norm budget."""
    l = fp.left
    r = fp.right
    return 0.5 * (float(np.dot(l.ravel(), l.ravel())) + float(np.dot(r.ravel(), r.ravel())))


def balanced_factors(x: np.ndarray, k: int | None = None) -> FactorPair:
    """Split ``x`` into balanced SVD factors ``L = U sqrt(S), R = V sqrt(S)``.

    The surrogate of the result equals the nuclear norm of ``x`` (restricted
    to the leading ``k`` singular triplets when ``k`` is given).
    """
    x = np.asarray(x, dtype=np.float64)
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    if k is not None:
        u, s, vt = u[:, :k], s[:k], vt[:k]
    root = np.sqrt(s)
    return FactorPair(u * root, vt.T * root)


@dataclass(frozen=True)
class Observations:
    """Sparse measurements ``b`` of an n-by-m matrix.

    Parameters
    ----------
    shape : (int, int)
        Shape of the underlying matrix.
    indices : (p, 2) integer array
        Zero-based (row, col) positions, unique and in range.
    values : (p,) float array
        Measured entries, all finite.
    """

    shape: tuple[int, int]
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        shape = (int(self.shape[0]), int(self.shape[1]))
        idx = np.array(self.indices, dtype=np.int64).reshape(-1, 2)
        vals = np.array(self.values, dtype=np.float64).ravel()
        if idx.shape[0] != vals.shape[0]:
            raise ValueError(
                f"{idx.shape[0]} index pairs but {vals.shape[0]} values"
            )
        if idx.size and (
            idx.min() < 0 or idx[:, 0].max() >= shape[0] or idx[:, 1].max() >= shape[1]
        ):
            raise ValueError(f"observation indices out of range for shape {shape}")
        flat = idx[:, 0] * shape[1] + idx[:, 1]
        if np.unique(flat).size != flat.size:
            raise ValueError("duplicate observation indices")
        if not np.all(np.isfinite(vals)):
            raise ValueError("observation values must be finite")
        idx.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    @property
    def count(self) -> int:
        return self.values.shape[0]

    def rows(self) -> np.ndarray:
        return self.indices[:, 0]

    def cols(self) -> np.ndarray:
        return self.indices[:, 1]


_DEFAULT_TOL_START = 1e-1
_DEFAULT_TOL_DECAY = 0.3
_DEFAULT_TOL_FLOOR = 1e-6


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the BPDN driver and its inner SPG solves.

    ``inner_tolerance_schedule`` holds relative optimality tolerances per
    outer step; when None, the default geometric schedule
    ``1e-1 * 0.3**step`` floored at 1e-6 is used.  ``rank_growth`` is the
    number of columns added per growth event (0 disables growth);
    ``rank_growth_threshold`` is the relative value-function decrease below
    which a converged inner solve counts as stalled.
    """

    factor_rank: int = 10
    max_outer_newton_steps: int = 30
    max_inner_spg_iterations: int = 20_000
    inner_tolerance_schedule: tuple[float, ...] | None = None
    root_tolerance: float = 5e-3
    line_search_memory: int = 10
    seed: int = 0
    rank_growth: int = 0
    rank_growth_threshold: float = 0.01

    def __post_init__(self):
        if self.factor_rank < 1:
            raise ValueError("factor_rank must be >= 1")
        if self.line_search_memory < 1:
            raise ValueError("line_search_memory must be >= 1")
        if self.root_tolerance <= 0:
            raise ValueError("root_tolerance must be positive")
        if self.inner_tolerance_schedule is not None:
            sched = tuple(float(t) for t in self.inner_tolerance_schedule)
            if any(t <= 0 for t in sched):
                raise ValueError("inner tolerances must be positive")
            object.__setattr__(self, "inner_tolerance_schedule", sched)

    def inner_tolerance(self, outer_step: int) -> float:
        sched = self.inner_tolerance_schedule
        if sched is not None:
            return sched[min(outer_step, len(sched) - 1)]
        return max(_DEFAULT_TOL_START * _DEFAULT_TOL_DECAY**outer_step, _DEFAULT_TOL_FLOOR)


# ---------------------------------------------------------------------------
# Matrix file I/O
# ---------------------------------------------------------------------------

def save_matrix(path, x: np.ndarray) -> None:
    """Write ``x`` in the binary matrix format.

    Layout: 16-byte header (magic ``PCMX``, u32 rows, u32 cols,
    little-endian, 4 reserved zero bytes) followed by rows*cols float64
    values, little-endian, row-major.
    """
    x = np.ascontiguousarray(x, dtype="<f8")
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {x.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, x.shape[0], x.shape[1]))
        fh.write(x.tobytes())


def load_matrix(path) -> np.ndarray:
    """Read a matrix written by :func:`save_matrix`."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, rows, cols = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        payload = fh.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise ValueError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


def save_matrix_csv(path, x: np.ndarray) -> None:
    """Write ``x`` as CSV, one matrix row per line."""
    np.savetxt(path, np.asarray(x, dtype=np.float64), delimiter=",", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    """Read a matrix from CSV (one row per line, comma-separated)."""
    x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return x

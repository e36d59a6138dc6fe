"""Linear measurement operators and their adjoints.

Three concrete operators cover every experiment: entry sampling, the
source-receiver to midpoint-offset relocation, and right-to-left
compositions of the two.  Operators are immutable after construction and
their apply methods are pure, so instances can be shared between threads.

A sampling operator (possibly composed with index relocations) also supports
a factored fast path that evaluates only the p sampled entries of
``L @ R.T`` at O(k) cost each, instead of forming the full product.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .core import FactorPair, form_product
from .errors import ShapeMismatchError, UnsupportedOperatorError

# Optional hook for instrumentation: when set (via count_product_entries),
# the factored forward path reports how many product entries it evaluated.
_entry_counter = None


@contextlib.contextmanager
def count_product_entries(counter: list):
    """Context manager that appends per-call entry counts to ``counter``."""
    global _entry_counter
    previous = _entry_counter
    _entry_counter = counter
    try:
        yield counter
    finally:
        _entry_counter = previous


class SamplingOp:
    """Gathers a fixed set of entries of an n-by-m matrix into a p-vector.

    The adjoint scatters a p-vector back onto those positions, zero
    elsewhere.
    """

    kind = "sampling"

    def __init__(self, shape, indices):
        self.shape = (int(shape[0]), int(shape[1]))
        idx = np.array(indices, dtype=np.int64).reshape(-1, 2)
        if idx.size and (
            idx.min() < 0
            or idx[:, 0].max() >= self.shape[0]
            or idx[:, 1].max() >= self.shape[1]
        ):
            raise ShapeMismatchError(f"sample indices out of range for {self.shape}")
        flat = idx[:, 0] * self.shape[1] + idx[:, 1]
        if np.unique(flat).size != flat.size:
            raise ValueError("sample indices must be unique")
        idx.setflags(write=False)
        self.indices = idx

    @property
    def in_shape(self):
        return self.shape

    @property
    def out_size(self) -> int:
        return self.indices.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.shape:
            raise ShapeMismatchError(f"expected {self.shape}, got {x.shape}")
        return x[self.indices[:, 0], self.indices[:, 1]]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != self.out_size:
            raise ShapeMismatchError(f"expected length {self.out_size}, got {y.shape[0]}")
        out = np.zeros(self.shape)
        out[self.indices[:, 0], self.indices[:, 1]] = y
        return out


class MidpointOffsetOp:
    """Relocates an ns-by-nr source-receiver grid onto the (m, h) canvas.

    Zero-based cell (s, r) lands at (s + r, s - r + nr - 1) on the square
    (ns + nr - 1) canvas; unused canvas cells are structural zeros.  The map
    is a pure index relocation with unit weights, hence an isometry onto its
    image, and the adjoint gathers the image back exactly.
    """

    kind = "midpoint_offset"

    def __init__(self, ns: int, nr: int):
        if ns < 1 or nr < 1:
            raise ValueError("source and receiver counts must be positive")
        self.ns = int(ns)
        self.nr = int(nr)
        q = self.ns + self.nr - 1
        self.in_shape = (self.ns, self.nr)
        self.out_shape = (q, q)
        s = np.repeat(np.arange(self.ns), self.nr)
        r = np.tile(np.arange(self.nr), self.ns)
        self._m_idx = s + r
        self._h_idx = s - r + self.nr - 1

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.in_shape:
            raise ShapeMismatchError(f"expected {self.in_shape}, got {x.shape}")
        out = np.zeros(self.out_shape)
        out[self._m_idx, self._h_idx] = x.ravel()
        return out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != self.out_shape:
            raise ShapeMismatchError(f"expected {self.out_shape}, got {y.shape}")
        return y[self._m_idx, self._h_idx].reshape(self.in_shape)

    def cell_on_canvas(self, s, r):
        """Canvas position of 0-based source-receiver cell (s, r)."""
        s = np.asarray(s, dtype=np.int64)
        r = np.asarray(r, dtype=np.int64)
        return s + r, s - r + self.nr - 1

    @property
    def H(self) -> "AdjointOp":
        return AdjointOp(self)


class AdjointOp:
    """Flips an operator: forward becomes adjoint and vice versa."""

    kind = "adjoint"

    def __init__(self, op):
        self.op = op
        self.in_shape = op.out_shape
        self.out_shape = op.in_shape

    def forward(self, x):
        return self.op.adjoint(x)

    def adjoint(self, y):
        return self.op.forward(y)

    @property
    def H(self):
        return self.op


class CompositeOp:
    """Composition of operators, applied right-to-left like a matrix product.

    All parts except the leftmost must be matrix-to-matrix; the leftmost may
    produce the measurement vector (e.g. a SamplingOp).
    """

    kind = "composite"

    def __init__(self, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("composite needs at least one operator")
        for left, right in zip(parts, parts[1:]):
            left_in = left.in_shape
            right_out = right.out_shape
            if left_in != right_out:
                raise ShapeMismatchError(
                    f"cannot chain {right_out} output into {left_in} input"
                )
        self.parts = parts
        self.in_shape = parts[-1].in_shape
        last = parts[0]
        self.out_size = getattr(last, "out_size", None)
        self.out_shape = getattr(last, "out_shape", None)

    def forward(self, x):
        for op in reversed(self.parts):
            x = op.forward(x)
        return x

    def adjoint(self, y):
        for op in self.parts:
            y = op.adjoint(y)
        return y


def apply_forward(op, x: np.ndarray) -> np.ndarray:
    """Apply the measurement operator to a dense matrix."""
    return op.forward(x)


def apply_adjoint(op, y: np.ndarray) -> np.ndarray:
    """Apply the adjoint, mapping measurements back to matrix space."""
    return op.adjoint(y)


def source_receiver_to_midpoint_offset(op: MidpointOffsetOp, x: np.ndarray) -> np.ndarray:
    """Scatter a source-receiver slice onto the midpoint-offset canvas."""
    return op.forward(x)


def as_effective_sampling(op) -> SamplingOp:
    """Reduce ``op`` to an equivalent entry-sampling operator when possible.

    Compositions of a SamplingOp with index relocations (midpoint-offset or
    its adjoint) reduce exactly; anything else raises
    UnsupportedOperatorError.
    """
    if isinstance(op, SamplingOp):
        return op
    if isinstance(op, CompositeOp):
        head = op.parts[0]
        if not isinstance(head, SamplingOp):
            raise UnsupportedOperatorError(
                "composite must start (leftmost) with a sampling operator"
            )
        rows = head.indices[:, 0]
        cols = head.indices[:, 1]
        shape = head.shape
        for part in op.parts[1:]:
            if isinstance(part, AdjointOp) and isinstance(part.op, MidpointOffsetOp):
                # gathering from the canvas: sampled (s, r) cells pull from
                # their canvas positions
                mh = part.op
                if shape != mh.in_shape:
                    raise ShapeMismatchError("relocation shape mismatch")
                rows, cols = mh.cell_on_canvas(rows, cols)
                shape = mh.out_shape
            elif isinstance(part, MidpointOffsetOp):
                # sampling the canvas itself: only on-image cells correspond
                # to entries of the source grid
                mh = part
                if shape != mh.out_shape:
                    raise ShapeMismatchError("relocation shape mismatch")
                m_idx, h_idx = rows, cols
                s = (m_idx + h_idx - (mh.nr - 1)) // 2
                r = (m_idx - h_idx + (mh.nr - 1)) // 2
                on_image = (
                    ((m_idx + h_idx - (mh.nr - 1)) % 2 == 0)
                    & (s >= 0) & (s < mh.ns) & (r >= 0) & (r < mh.nr)
                )
                if not np.all(on_image):
                    raise UnsupportedOperatorError(
                        "sampled canvas cells fall outside the relocation image"
                    )
                rows, cols = s, r
                shape = mh.in_shape
            else:
                raise UnsupportedOperatorError(
                    f"{type(part).__name__} is not an index relocation"
                )
        return SamplingOp(shape, np.column_stack([rows, cols]))
    raise UnsupportedOperatorError(f"{type(op).__name__} is not sampling-reducible")


def apply_forward_factored(op, fp: FactorPair) -> np.ndarray:
    """Evaluate the forward map on ``L @ R.T`` touching only sampled entries.

    Matches ``apply_forward(op, form_product(fp))`` but at O(k) per sampled
    entry.  Requires ``op`` to reduce to entry sampling.
    """
    sampler = as_effective_sampling(op)
    if sampler.shape != fp.shape:
        raise ShapeMismatchError(
            f"operator expects {sampler.shape}, factors give {fp.shape}"
        )
    rows = sampler.indices[:, 0]
    cols = sampler.indices[:, 1]
    if _entry_counter is not None:
        _entry_counter.append(rows.shape[0])
    return np.einsum("ij,ij->i", fp.left[rows], fp.right[cols])


# ---------------------------------------------------------------------------
# Serialization: mask CSV and operator descriptors
# ---------------------------------------------------------------------------

def save_mask_csv(path, indices) -> None:
    """Write zero-based "row,col" pairs, one per line."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1, 2)
    np.savetxt(path, idx, delimiter=",", fmt="%d")


def load_mask_csv(path) -> np.ndarray:
    """Read a mask written by :func:`save_mask_csv`."""
    idx = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    return idx.reshape(-1, 2)


def describe(op) -> dict:
    """JSON-ready descriptor (kind, shape, parameters) of an operator."""
    if isinstance(op, SamplingOp):
        return {
            "kind": "sampling",
            "shape": list(op.shape),
            "indices": op.indices.tolist(),
        }
    if isinstance(op, MidpointOffsetOp):
        return {"kind": "midpoint_offset", "ns": op.ns, "nr": op.nr}
    if isinstance(op, AdjointOp):
        return {"kind": "adjoint", "of": describe(op.op)}
    if isinstance(op, CompositeOp):
        return {"kind": "composite", "parts": [describe(p) for p in op.parts]}
    raise UnsupportedOperatorError(f"cannot describe {type(op).__name__}")


def from_descriptor(desc: dict):
    """Rebuild an operator from :func:`describe` output."""
    kind = desc["kind"]
    if kind == "sampling":
        return SamplingOp(tuple(desc["shape"]), desc["indices"])
    if kind == "midpoint_offset":
        return MidpointOffsetOp(desc["ns"], desc["nr"])
    if kind == "adjoint":
        return AdjointOp(from_descriptor(desc["of"]))
    if kind == "composite":
        return CompositeOp([from_descriptor(p) for p in desc["parts"]])
    raise UnsupportedOperatorError(f"unknown operator kind {kind!r}")


def materialize(op, in_shape=None) -> np.ndarray:
    """Explicit matrix of the operator, one column per input basis matrix.

    Intended for small shapes and oracle checks only.
    """
    shape = in_shape or op.in_shape
    n, m = shape
    basis = np.zeros(shape)
    cols = []
    for i in range(n):
        for j in range(m):
            basis[i, j] = 1.0
            out = op.forward(basis)
            cols.append(np.asarray(out, dtype=np.float64).ravel())
            basis[i, j] = 0.0
    return np.column_stack(cols)


def product_shape(op) -> tuple[int, int]:
    """Shape of the matrix variable the operator consumes."""
    return op.in_shape


__all__ = [
    "SamplingOp",
    "MidpointOffsetOp",
    "AdjointOp",
    "CompositeOp",
    "apply_forward",
    "apply_adjoint",
    "apply_forward_factored",
    "source_receiver_to_midpoint_offset",
    "as_effective_sampling",
    "count_product_entries",
    "save_mask_csv",
    "load_mask_csv",
    "describe",
    "from_descriptor",
    "materialize",
    "product_shape",
]

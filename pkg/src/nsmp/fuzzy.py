"""Sparse fuzzy-set algebra over entities.

A fuzzy set of candidate bindings is a sparse nonnegative weight vector in
index-sorted coordinate form. The operations here are the symbolic half of the
engine: thresholded normalization, one-hop propagation through a boolean
relation matrix (with the four direction/polarity cases), product-t-norm
aggregation of messages, and the elementwise combiners used for disjunction.

All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from nsmp.kg import RelationMatrix

DEFAULT_EPSILON = 1e-14


@dataclass(frozen=True, eq=False)
class FuzzyVec:
    """Sparse fuzzy set: strictly increasing indices, positive float64 weights.

    After `normalize` the weights sum to 1 within 1e-9, or the vector is
    empty. Instances are immutable; operations return new vectors.
    """

    dim: int
    indices: np.ndarray
    weights: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "FuzzyVec":
        return cls(dim, np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))

    @classmethod
    def from_dict(cls, entries: dict[int, float], dim: int) -> "FuzzyVec":
        idx = np.array(sorted(entries), dtype=np.int64)
        w = np.array([entries[i] for i in idx], dtype=np.float64)
        return cls(dim, idx, w)

    @property
    def size(self) -> int:
        return int(self.indices.size)

    @property
    def is_empty(self) -> bool:
        return self.indices.size == 0

    def support(self) -> set[int]:
        return set(int(i) for i in self.indices)

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(w) for i, w in zip(self.indices, self.weights)}

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.dim, dtype=np.float64)
        dense[self.indices] = self.weights
        return dense

    def validate(self) -> None:
        """Check the representation invariants (used by tests, not hot paths)."""
        if self.indices.size != self.weights.size:
            raise ValueError("index/weight length mismatch")
        if self.indices.size:
            if self.indices[0] < 0 or self.indices[-1] >= self.dim:
                raise ValueError("index out of range")
            if np.any(np.diff(self.indices) <= 0):
                raise ValueError("indices not strictly increasing")
            if np.any(self.weights <= 0):
                raise ValueError("non-positive weight stored")

    def to_text(self) -> str:
        """Debug dump: one `id<TAB>weight` line per entry, 17 significant digits."""
        return "".join(f"{int(i)}\t{float(w):.17g}\n" for i, w in zip(self.indices, self.weights))

    @classmethod
    def from_text(cls, text: str, dim: int) -> "FuzzyVec":
        entries: dict[int, float] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            i, w = line.split("\t")
            entries[int(i)] = float(w)
        return cls.from_dict(entries, dim)


def one_hot(index: int, dim: int) -> FuzzyVec:
    """Fuzzy set containing exactly one entity with weight 1."""
    if not 0 <= index < dim:
        raise IndexError(f"index {index} out of range for dimension {dim}")
    return FuzzyVec(dim, np.array([index], dtype=np.int64), np.array([1.0]))


def _normalize_sparse(dim: int, indices: np.ndarray, weights: np.ndarray, epsilon: float) -> FuzzyVec:
    keep = weights >= epsilon
    if not keep.all():
        indices = indices[keep]
        weights = weights[keep]
    total = weights.sum()
    if indices.size == 0:
        return FuzzyVec.empty(dim)
    return FuzzyVec(dim, indices, weights / max(epsilon, total))


def normalize(v: "FuzzyVec | np.ndarray", epsilon: float = DEFAULT_EPSILON) -> FuzzyVec:
    """Thresholded normalization: drop weights below `epsilon` (keep = weight >= epsilon),
    then divide survivors by max(epsilon, their sum).

    Negative inputs are clamped to 0 before thresholding. All-below-threshold
    input yields the empty vector. Idempotent on its own outputs.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if isinstance(v, FuzzyVec):
        return _normalize_sparse(v.dim, v.indices, v.weights, epsilon)
    dense = np.asarray(v, dtype=np.float64)
    if dense.ndim != 1:
        raise ValueError("expected a 1-d weight vector")
    idx = np.nonzero(dense >= epsilon)[0].astype(np.int64)
    return _normalize_sparse(dense.size, idx, dense[idx], epsilon)


def propagate(
    p: FuzzyVec,
    matrix: "RelationMatrix",
    negated: bool = False,
    alpha: float = 100.0,
    epsilon: float = DEFAULT_EPSILON,
) -> FuzzyVec:
    """One-hop symbolic inference through a boolean relation matrix.

    The matrix must be oriented so that propagation flows from its rows to its
    columns (pass the transposed adjacency to walk edges backwards). The
    positive case is normalize(p @ M) computed sparsely; the negated case is
    normalize(clamp(alpha/|V| - p @ M, 0)), which needs a dense work buffer
    because the constant term touches every coordinate.
    """
    if p.dim != matrix.n_rows or p.dim != matrix.n_cols:
        raise ValueError(f"dimension mismatch: vector {p.dim}, matrix {matrix.n_rows}x{matrix.n_cols}")
    cols, row_pos = matrix.gather_rows(p.indices)
    if not negated:
        if cols.size == 0:
            return FuzzyVec.empty(p.dim)
        uniq, inverse = np.unique(cols, return_inverse=True)
        sums = np.zeros(uniq.size, dtype=np.float64)
        np.add.at(sums, inverse, p.weights[row_pos])
        return _normalize_sparse(p.dim, uniq, sums, epsilon)
    buffer = np.full(p.dim, alpha / p.dim, dtype=np.float64)
    if cols.size:
        np.subtract.at(buffer, cols, p.weights[row_pos])
        np.maximum(buffer, 0.0, out=buffer)
    return normalize(buffer, epsilon)


def hadamard_aggregate(messages: Sequence[FuzzyVec], epsilon: float = DEFAULT_EPSILON) -> FuzzyVec:
    """Product-t-norm aggregation: elementwise product over the support
    intersection of all messages, then a single normalize."""
    if not messages:
        raise ValueError("cannot aggregate zero messages")
    dim = messages[0].dim
    indices = messages[0].indices
    weights = messages[0].weights
    for m in messages[1:]:
        if m.dim != dim:
            raise ValueError("dimension mismatch in aggregation")
        if indices.size == 0:
            break
        indices, left, right = np.intersect1d(indices, m.indices, assume_unique=True, return_indices=True)
        weights = weights[left] * m.weights[right]
    if indices.size == 0:
        return FuzzyVec.empty(dim)
    return _normalize_sparse(dim, indices, weights.astype(np.float64, copy=False), epsilon)


def union_max(branch_scores: Sequence[np.ndarray]) -> np.ndarray:
    """Combine DNF branch score vectors by elementwise maximum."""
    if not len(branch_scores):
        raise ValueError("cannot combine zero branches")
    return np.maximum.reduce([np.asarray(b, dtype=np.float64) for b in branch_scores])


def union_prob_sum(branch_scores: Sequence[np.ndarray]) -> np.ndarray:
    """Combine DNF branch score vectors by probabilistic sum: 1 - prod(1 - b)."""
    if not len(branch_scores):
        raise ValueError("cannot combine zero branches")
    acc = np.ones_like(np.asarray(branch_scores[0], dtype=np.float64))
    for b in branch_scores:
        acc *= 1.0 - np.asarray(b, dtype=np.float64)
    return 1.0 - acc

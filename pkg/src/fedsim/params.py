"""Flat parameter vectors and the arithmetic every algorithm step is built on.

A ParamVector is an immutable 1-D float64 array of fixed dimension.  Server
models, client models, momentum state and aggregated updates are all plain
ParamVectors; nothing in the simulator carries structure beyond the flat
layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


def _check_same_dim(a: "ParamVector", b: "ParamVector", op: str) -> None:
    if a.dim != b.dim:
        raise ValueError(f"{op}: dimension mismatch ({a.dim} vs {b.dim})")


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Immutable flat vector of 64-bit reals.

    The backing array is copied at construction and marked read-only, so a
    ParamVector can be shared freely across threads.  Non-finite entries are
    rejected: a vector that exists is always usable.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"parameter vector must be 1-D, got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("parameter vector must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("parameter vector contains non-finite entries")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __len__(self) -> int:
        return self.dim

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"ParamVector(dim={self.dim})"

    @classmethod
    def of(cls, *entries: float) -> "ParamVector":
        return cls(np.array(entries, dtype=np.float64))

    @classmethod
    def zeros(cls, dim: int) -> "ParamVector":
        return cls(np.zeros(dim))


def axpy(alpha: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """Return alpha*x + y."""
    if not np.isfinite(alpha):
        raise ValueError(f"axpy: scale must be finite, got {alpha}")
    _check_same_dim(x, y, "axpy")
    return ParamVector(alpha * x.values + y.values)


def weighted_average(
    vectors: Sequence[ParamVector], weights: Iterable[float]
) -> ParamVector:
    """Weighted sum of vectors with nonnegative weights summing to one.

    Weight normalization is the caller's job; this validates and fails loudly
    on misconfigured weights rather than silently renormalizing.
    """
    vectors = list(vectors)
    weights = [float(w) for w in weights]
    if not vectors:
        raise ValueError("weighted_average: empty vector list")
    if len(weights) != len(vectors):
        raise ValueError(
            f"weighted_average: {len(vectors)} vectors but {len(weights)} weights"
        )
    if any(w < 0.0 for w in weights):
        raise ValueError("weighted_average: weights must be nonnegative")
    total = sum(weights)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"weighted_average: weights sum to {total!r}, expected 1")
    dim = vectors[0].dim
    for v in vectors[1:]:
        _check_same_dim(vectors[0], v, "weighted_average")
    acc = np.zeros(dim)
    for w, v in zip(weights, vectors):
        acc += w * v.values
    return ParamVector(acc)


def dot(x: ParamVector, y: ParamVector) -> float:
    """Standard inner product."""
    _check_same_dim(x, y, "dot")
    return float(np.dot(x.values, y.values))

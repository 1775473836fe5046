"""Mappings from attention logits onto the probability simplex.

Three normalizers are provided: softmax, sparsemax and 1.5-entmax. The two
sparse ones are solved exactly with a sort-based threshold search, which is
cheap for the feature counts seen in tabular data and keeps the Jacobian
closed-form.

All functions accept either a single vector of length M or a 2-D array whose
rows are independent vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

import numpy as np

from .errors import DimensionError, InputError, NumericError


class AttentionKind(str, Enum):
    SOFTMAX = "softmax"
    SPARSEMAX = "sparsemax"
    ENTMAX15 = "entmax15"

    @property
    def code(self) -> int:
        return _KIND_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "AttentionKind":
        for kind, c in _KIND_CODES.items():
            if c == code:
                return kind
        raise InputError(f"unknown attention kind code {code}")


_KIND_CODES = {
    AttentionKind.SOFTMAX: 0,
    AttentionKind.SPARSEMAX: 1,
    AttentionKind.ENTMAX15: 2,
}


def _check_logits(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim not in (1, 2):
        raise DimensionError(f"expected a vector or a 2-D array, got shape {z.shape}")
    if z.shape[-1] == 0:
        raise DimensionError("cannot normalize an empty vector")
    if not np.all(np.isfinite(z)):
        raise NumericError("attention logits contain non-finite values")
    return z


def softmax(z) -> np.ndarray:
    z = _check_logits(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sparsemax(z) -> np.ndarray:
    """Euclidean projection onto the simplex via the sorted threshold."""
    z = _check_logits(z)
    z = z - z.max(axis=-1, keepdims=True)
    zs = -np.sort(-z, axis=-1)
    k = np.arange(1, z.shape[-1] + 1, dtype=np.float64)
    cs = np.cumsum(zs, axis=-1) - 1.0
    # the condition is true on a prefix of the sorted order
    support = np.count_nonzero(zs - cs / k > 0, axis=-1)
    tau = np.take_along_axis(cs, support[..., None] - 1, axis=-1) / support[..., None]
    return np.maximum(z - tau, 0.0)


def entmax15(z) -> np.ndarray:
    """Exact alpha=1.5 entmax.

    Solves p_i = max(z_i/2 - tau, 0)^2 with sum(p) = 1 by scanning the
    candidate supports in sorted order.
    """
    z = _check_logits(z)
    x = (z - z.max(axis=-1, keepdims=True)) / 2.0
    xs = -np.sort(-x, axis=-1)
    k = np.arange(1, z.shape[-1] + 1, dtype=np.float64)
    mean = np.cumsum(xs, axis=-1) / k
    mean_sq = np.cumsum(xs * xs, axis=-1) / k
    ss = k * (mean_sq - mean * mean)
    delta = (1.0 - ss) / k
    tau = mean - np.sqrt(np.maximum(delta, 0.0))
    support = np.count_nonzero(tau <= xs, axis=-1)
    tau_star = np.take_along_axis(tau, support[..., None] - 1, axis=-1)
    return np.maximum(x - tau_star, 0.0) ** 2


_FORWARD = {
    AttentionKind.SOFTMAX: softmax,
    AttentionKind.SPARSEMAX: sparsemax,
    AttentionKind.ENTMAX15: entmax15,
}


def _jacobian_weights(kind: AttentionKind, p: np.ndarray) -> np.ndarray:
    if kind is AttentionKind.SOFTMAX:
        return p
    if kind is AttentionKind.SPARSEMAX:
        return (p > 0).astype(np.float64)
    return np.sqrt(p)


def jvp(kind, p, upstream) -> np.ndarray:
    """Return J^T @ upstream for the mapper Jacobian evaluated at output ``p``.

    Every kind has J = diag(s) - s s^T / sum(s) for a kind-specific ``s``;
    J is symmetric so J^T v == J v.
    """
    kind = AttentionKind(kind)
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(upstream, dtype=np.float64)
    if p.shape != v.shape:
        raise DimensionError(f"output shape {p.shape} != upstream shape {v.shape}")
    s = _jacobian_weights(kind, p)
    total = s.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise InputError("degenerate simplex point with empty support")
    sv = s * v
    return sv - s * (sv.sum(axis=-1, keepdims=True) / total)


@dataclass(frozen=True)
class SimplexPoint:
    weights: np.ndarray

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.weights > 0))


@dataclass(frozen=True)
class AttentionMapper:
    kind: AttentionKind = AttentionKind.ENTMAX15

    def __post_init__(self):
        object.__setattr__(self, "kind", AttentionKind(self.kind))

    def __call__(self, z) -> np.ndarray:
        return _FORWARD[self.kind](z)

    def backward(self, p, upstream) -> np.ndarray:
        return jvp(self.kind, p, upstream)


def as_mapper(mapper: Union[AttentionMapper, AttentionKind, str]) -> AttentionMapper:
    if isinstance(mapper, AttentionMapper):
        return mapper
    return AttentionMapper(AttentionKind(mapper))


def map_forward(mapper, z) -> SimplexPoint:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError("map_forward takes a single logit vector")
    return SimplexPoint(as_mapper(mapper)(z))


def map_backward(mapper, p, upstream) -> np.ndarray:
    if isinstance(p, SimplexPoint):
        p = p.weights
    return as_mapper(mapper).backward(p, upstream)


def sparsity_fraction(points: Union[np.ndarray, Iterable[SimplexPoint]], threshold: float) -> float:
    """Share of attention entries strictly below ``threshold``."""
    if threshold < 0:
        raise InputError("threshold must be nonnegative")
    if isinstance(points, np.ndarray):
        w = points
    else:
        rows = [p.weights if isinstance(p, SimplexPoint) else np.asarray(p) for p in points]
        if not rows:
            raise InputError("sparsity of an empty collection is undefined")
        w = np.stack(rows)
    if w.size == 0:
        raise InputError("sparsity of an empty collection is undefined")
    return float(np.count_nonzero(w < threshold)) / w.size

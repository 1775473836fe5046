"""Differentiable decision trees with sparse feature attention.

Every internal node n owns attention logits A_n (length M) and a threshold
b_n. Its gate is

    g_n(x) = sigmoid(<mapper(A_n), x> - b_n)

and gives the probability of descending to the RIGHT child; the left child
gets 1 - g_n. A leaf's probability is the product of the branch factors on
its root path, the tree output is the probability-weighted mix of the leaf
responses Q_j, and the forest averages its K trees.

Nodes are stored breadth first (root = 0, children of n are 2n+1 and 2n+2),
leaves left to right. Parameters for the whole forest live in three stacked
arrays. Attention-weighted inputs and the weight gradient are single BLAS
matrix products; the per-node routing recursion and its reverse pass run in
small compiled kernels that loop over samples in a fixed order, so results
are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np
from numba import njit

from .attention import AttentionKind, as_mapper
from .errors import DimensionError, NumericError


def sigmoid(t):
    # exp only ever sees -|t|, so it cannot overflow
    t = np.asarray(t, dtype=np.float64)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0, e) / (1.0 + e)


@dataclass
class GateParams:
    attention_logits: np.ndarray
    threshold: float


@dataclass
class TreeParams:
    """One tree; ``logits`` is (2^d - 1, M), ``leaves`` is (2^d, C)."""

    depth: int
    logits: np.ndarray
    thresholds: np.ndarray
    leaves: np.ndarray

    def __post_init__(self):
        n_internal = 2 ** self.depth - 1
        if self.depth < 1:
            raise DimensionError("tree depth must be positive")
        if self.logits.ndim != 2 or self.logits.shape[0] != n_internal:
            raise DimensionError(f"expected {n_internal} rows of attention logits, got {self.logits.shape}")
        if self.thresholds.shape != (n_internal,):
            raise DimensionError(f"expected {n_internal} thresholds, got {self.thresholds.shape}")
        if self.leaves.ndim != 2 or self.leaves.shape[0] != 2 ** self.depth:
            raise DimensionError(f"expected {2 ** self.depth} leaf responses, got {self.leaves.shape}")

    def gate(self, node: int) -> GateParams:
        return GateParams(self.logits[node], float(self.thresholds[node]))


@dataclass
class ForestParams:
    """All learnable parameters of a K-tree forest.

    logits:     (K, 2^d - 1, M)
    thresholds: (K, 2^d - 1)
    leaves:     (K, 2^d, C)
    """

    logits: np.ndarray
    thresholds: np.ndarray
    leaves: np.ndarray
    attention: AttentionKind = AttentionKind.ENTMAX15

    def __post_init__(self):
        self.attention = AttentionKind(self.attention)
        if self.logits.ndim != 3 or self.thresholds.ndim != 2 or self.leaves.ndim != 3:
            raise DimensionError("forest arrays must be (K,I,M), (K,I) and (K,L,C)")
        k, n_internal, _ = self.logits.shape
        if k < 1:
            raise DimensionError("a forest needs at least one tree")
        if self.thresholds.shape != (k, n_internal):
            raise DimensionError(f"thresholds shape {self.thresholds.shape} != {(k, n_internal)}")
        if self.leaves.shape[:2] != (k, n_internal + 1):
            raise DimensionError(f"leaves shape {self.leaves.shape} does not match {n_internal} internal nodes")
        depth = int(round(np.log2(n_internal + 1)))
        if 2 ** depth - 1 != n_internal:
            raise DimensionError(f"{n_internal} internal nodes is not a complete binary tree")

    @classmethod
    def zeros(cls, num_trees: int, depth: int, num_features: int, output_dim: int = 1,
              attention=AttentionKind.ENTMAX15) -> "ForestParams":
        n_internal = 2 ** depth - 1
        return cls(
            logits=np.zeros((num_trees, n_internal, num_features)),
            thresholds=np.zeros((num_trees, n_internal)),
            leaves=np.zeros((num_trees, n_internal + 1, output_dim)),
            attention=attention,
        )

    @classmethod
    def from_trees(cls, trees: List[TreeParams], attention=AttentionKind.ENTMAX15) -> "ForestParams":
        if not trees:
            raise DimensionError("a forest needs at least one tree")
        shapes = {(t.depth, t.logits.shape[1], t.leaves.shape[1]) for t in trees}
        if len(shapes) != 1:
            raise DimensionError("all trees must share depth, feature count and output size")
        return cls(
            logits=np.stack([t.logits for t in trees]).astype(np.float64),
            thresholds=np.stack([t.thresholds for t in trees]).astype(np.float64),
            leaves=np.stack([t.leaves for t in trees]).astype(np.float64),
            attention=attention,
        )

    @property
    def num_trees(self) -> int:
        return self.logits.shape[0]

    @property
    def num_internal(self) -> int:
        return self.logits.shape[1]

    @property
    def num_features(self) -> int:
        return self.logits.shape[2]

    @property
    def output_dim(self) -> int:
        return self.leaves.shape[2]

    @property
    def depth(self) -> int:
        return int(round(np.log2(self.num_internal + 1)))

    def tree(self, h: int) -> TreeParams:
        return TreeParams(self.depth, self.logits[h], self.thresholds[h], self.leaves[h])

    def arrays(self) -> dict:
        return {"logits": self.logits, "thresholds": self.thresholds, "leaves": self.leaves}

    def copy(self) -> "ForestParams":
        return ForestParams(self.logits.copy(), self.thresholds.copy(), self.leaves.copy(), self.attention)

    def attention_weights(self, mapper=None) -> np.ndarray:
        """Mapped attention of every node, shape (K, I, M)."""
        mapper = as_mapper(mapper if mapper is not None else self.attention)
        k, i, m = self.logits.shape
        return mapper(self.logits.reshape(k * i, m)).reshape(k, i, m)


@dataclass
class ForestGradients:
    logits: np.ndarray
    thresholds: np.ndarray
    leaves: np.ndarray

    @classmethod
    def zeros_like(cls, params: ForestParams) -> "ForestGradients":
        return cls(np.zeros_like(params.logits), np.zeros_like(params.thresholds), np.zeros_like(params.leaves))

    def arrays(self) -> dict:
        return {"logits": self.logits, "thresholds": self.thresholds, "leaves": self.leaves}


@dataclass
class ForwardCache:
    """Intermediates of a forward pass needed by the backward pass."""

    x: np.ndarray             # (N, M)
    weights: np.ndarray       # (K, I, M) mapped attention
    gates: np.ndarray         # (N, K, I)
    leaf_probs: np.ndarray    # (N, K, L)
    tree_outputs: np.ndarray  # (N, K, C)


@njit(cache=True)
def _route(z, thresholds, leaves, gates, probs, out):
    # z: (N, K, I) attention-weighted inputs; node reach probabilities kept in
    # heap order in `reach`, leaves occupying slots I..2I
    n, k, n_int = z.shape
    n_leaves = n_int + 1
    c = leaves.shape[2]
    reach = np.empty(2 * n_int + 1)
    for a in range(n):
        for h in range(k):
            reach[0] = 1.0
            for i in range(n_int):
                t = z[a, h, i] - thresholds[h, i]
                if t >= 0.0:
                    g = 1.0 / (1.0 + np.exp(-t))
                else:
                    e = np.exp(t)
                    g = e / (1.0 + e)
                gates[a, h, i] = g
                reach[2 * i + 1] = reach[i] * (1.0 - g)
                reach[2 * i + 2] = reach[i] * g
            for j in range(n_leaves):
                p = reach[n_int + j]
                probs[a, h, j] = p
                for q in range(c):
                    out[a, h, q] += p * leaves[h, j, q]


@njit(cache=True)
def _backprop(gates, probs, leaves, du, d_leaves, dz):
    # reverse of _route: leaf responses and pre-sigmoid gate inputs
    n, k, n_int = gates.shape
    n_leaves = n_int + 1
    c = leaves.shape[2]
    reach = np.empty(2 * n_int + 1)
    d_reach = np.empty(2 * n_int + 1)
    for a in range(n):
        for h in range(k):
            reach[0] = 1.0
            for i in range(n_int):
                g = gates[a, h, i]
                reach[2 * i + 1] = reach[i] * (1.0 - g)
                reach[2 * i + 2] = reach[i] * g
            for j in range(n_leaves):
                acc = 0.0
                p = probs[a, h, j]
                for q in range(c):
                    acc += du[a, h, q] * leaves[h, j, q]
                    d_leaves[h, j, q] += p * du[a, h, q]
                d_reach[n_int + j] = acc
            for i in range(n_int - 1, -1, -1):
                g = gates[a, h, i]
                d_left = d_reach[2 * i + 1]
                d_right = d_reach[2 * i + 2]
                d_reach[i] = (1.0 - g) * d_left + g * d_right
                dz[a, h, i] = reach[i] * (d_right - d_left) * g * (1.0 - g)


def _as_batch(batch, num_features: int) -> np.ndarray:
    x = np.asarray(getattr(batch, "values", batch), dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != num_features:
        raise DimensionError(f"expected {num_features} feature columns, got shape {x.shape}")
    return x


def forward(params: ForestParams, batch, mapper=None) -> ForwardCache:
    """Run the forest on a batch and keep everything the backward pass needs."""
    mapper = as_mapper(mapper if mapper is not None else params.attention)
    x = _as_batch(batch, params.num_features)
    k, n_internal, m = params.logits.shape
    n = x.shape[0]

    w = mapper(params.logits.reshape(k * n_internal, m))
    z = np.ascontiguousarray((x @ w.T).reshape(n, k, n_internal))
    gates = np.empty((n, k, n_internal))
    probs = np.empty((n, k, n_internal + 1))
    out = np.zeros((n, k, params.output_dim))
    _route(z, np.ascontiguousarray(params.thresholds), np.ascontiguousarray(params.leaves), gates, probs, out)
    return ForwardCache(x=x, weights=w.reshape(k, n_internal, m), gates=gates, leaf_probs=probs, tree_outputs=out)


def forest_forward(params: ForestParams, batch, mapper=None) -> np.ndarray:
    """Ensemble prediction, shape (N, C)."""
    cache = forward(params, batch, mapper)
    return cache.tree_outputs.sum(axis=1) / params.num_trees


def backward(params: ForestParams, cache: ForwardCache, tree_upstream: np.ndarray, mapper=None) -> ForestGradients:
    """Gradients given dL/dT_h(x_n) for every sample and tree, shape (N, K, C)."""
    mapper = as_mapper(mapper if mapper is not None else params.attention)
    k, n_internal, m = params.logits.shape
    n = cache.x.shape[0]
    du = np.ascontiguousarray(tree_upstream, dtype=np.float64)
    if du.shape != (n, k, params.output_dim):
        raise DimensionError(f"tree upstream shape {du.shape} != {(n, k, params.output_dim)}")
    if not np.all(np.isfinite(du)):
        raise NumericError("upstream gradient contains non-finite values")

    d_leaves = np.zeros_like(params.leaves)
    dz = np.empty((n, k, n_internal))
    _backprop(cache.gates, cache.leaf_probs, np.ascontiguousarray(params.leaves), du, d_leaves, dz)

    d_thresholds = -dz.sum(axis=0)
    d_weights = dz.reshape(n, k * n_internal).T @ cache.x
    d_logits = mapper.backward(cache.weights.reshape(k * n_internal, m), d_weights)
    return ForestGradients(d_logits.reshape(k, n_internal, m), d_thresholds, d_leaves)


def forest_backward(params: ForestParams, batch, upstream, mapper=None) -> ForestGradients:
    """Gradients of sum_n <upstream_n, yhat_n> with respect to all parameters."""
    upstream = np.asarray(upstream, dtype=np.float64)
    x = _as_batch(batch, params.num_features)
    if upstream.ndim == 1 and params.output_dim == 1:
        upstream = upstream[:, None]
    if upstream.shape != (x.shape[0], params.output_dim):
        raise DimensionError(f"upstream shape {upstream.shape} != {(x.shape[0], params.output_dim)}")
    if not np.all(np.isfinite(upstream)):
        raise NumericError("upstream gradient contains non-finite values")
    cache = forward(params, x, mapper)
    tree_upstream = np.broadcast_to(upstream[:, None, :] / params.num_trees,
                                    (x.shape[0], params.num_trees, params.output_dim))
    return backward(params, cache, tree_upstream, mapper)


# single-tree conveniences

def gate_forward(gate: GateParams, x, mapper=AttentionKind.ENTMAX15) -> float:
    x = np.asarray(x, dtype=np.float64)
    logits = np.asarray(gate.attention_logits, dtype=np.float64)
    if x.shape != logits.shape:
        raise DimensionError(f"input length {x.shape} != attention length {logits.shape}")
    w = as_mapper(mapper)(logits)
    return float(sigmoid(np.dot(w, x) - gate.threshold))


def _single_tree(tree: TreeParams, attention) -> ForestParams:
    return ForestParams(tree.logits[None], tree.thresholds[None], tree.leaves[None], attention)


def leaf_probabilities(tree: TreeParams, x, mapper=AttentionKind.ENTMAX15) -> np.ndarray:
    """Reach probability of each leaf, length 2^d."""
    mapper = as_mapper(mapper)
    cache = forward(_single_tree(tree, mapper.kind), np.asarray(x)[None, :], mapper)
    return cache.leaf_probs[0, 0]


def tree_forward(tree: TreeParams, x, mapper=AttentionKind.ENTMAX15) -> np.ndarray:
    mapper = as_mapper(mapper)
    cache = forward(_single_tree(tree, mapper.kind), np.asarray(x)[None, :], mapper)
    return cache.tree_outputs[0, 0]

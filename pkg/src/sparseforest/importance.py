"""Feature importance estimation and attention initialization.

Importance comes from a small boosted ensemble of shallow CART trees: every
accepted split credits its impurity reduction (variance for regression, Gini
for classification) to the split feature. Normalized gains then seed the
attention logits as ``scale * log(importance + floor)`` so that the mapped
attention starts out concentrated on the informative columns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .data import FeatureMatrix, Task, TargetVector
from .errors import ConfigError, DimensionError, InputError
from .forest import ForestParams

log = logging.getLogger(__name__)


@dataclass
class ImportanceVector:
    scores: np.ndarray
    fallback: bool = False  # True when no split had any gain and the vector is uniform

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1 or self.scores.size == 0:
            raise DimensionError("importance must be a nonempty vector")
        if np.any(self.scores < 0) or not np.all(np.isfinite(self.scores)):
            raise InputError("importance scores must be finite and nonnegative")
        total = self.scores.sum()
        if total <= 0:
            raise InputError("importance scores sum to zero")
        self.scores = self.scores / total

    @classmethod
    def uniform(cls, m: int, fallback: bool = False) -> "ImportanceVector":
        return cls(np.full(m, 1.0 / m), fallback)


class InitMode(str, Enum):
    RANDOM = "random"
    DATA_AWARE = "data_aware"


@dataclass
class InitConfig:
    mode: InitMode = InitMode.DATA_AWARE
    scale: float = 1.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.mode, InitMode):
            self.mode = InitMode(str(self.mode).replace("-", "_"))
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ConfigError("init scale must be finite and positive")
        if not (np.isfinite(self.noise_std) and self.noise_std >= 0):
            raise ConfigError("init noise_std must be finite and nonnegative")


def _split_gains(x: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best impurity reduction per feature for one node.

    ``y`` is (n, C); impurity is the summed squared deviation over all target
    columns. On one-hot class indicators that is exactly n times the Gini
    impurity, so a single criterion serves both tasks.

    Returns (gain, threshold) arrays of length M; gain is -inf where no
    valid split exists.
    """
    n, m = x.shape
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left

    yc = y - y.mean(axis=0)
    ys = yc[order]                                   # (n, M, C)
    left = np.cumsum(ys, axis=0)[:-1]
    left2 = np.cumsum((ys * ys).sum(axis=-1), axis=0)[:-1]
    total = yc.sum(axis=0)
    total2 = (yc * yc).sum()
    parent = total2 - (total * total).sum() / n
    imp_left = left2 - (left * left).sum(axis=-1) / n_left
    imp_right = (total2 - left2) - ((total - left) ** 2).sum(axis=-1) / n_right

    gain = parent - imp_left - imp_right
    valid = xs[1:] > xs[:-1]
    valid[: min_leaf - 1] = False
    if min_leaf > 1:
        valid[-(min_leaf - 1):] = False
    gain = np.where(valid, gain, -np.inf)
    best = np.argmax(gain, axis=0)
    cols = np.arange(m)
    thresholds = 0.5 * (xs[best, cols] + xs[best + 1, cols])
    return gain[best, cols], thresholds


def _fit_tree(x, residual, rows, depth, min_leaf, gains, fitted, shrinkage):
    """Grow one greedy tree on ``rows``; adds leaf means into ``fitted``."""
    xr, yr = x[rows], residual[rows]
    if depth > 0 and rows.size >= 2 * min_leaf:
        feat_gain, thresholds = _split_gains(xr, yr, min_leaf)
        j = int(np.argmax(feat_gain))
        if feat_gain[j] > 1e-12 * rows.size:
            gains[j] += feat_gain[j]
            go_right = xr[:, j] > thresholds[j]
            _fit_tree(x, residual, rows[~go_right], depth - 1, min_leaf, gains, fitted, shrinkage)
            _fit_tree(x, residual, rows[go_right], depth - 1, min_leaf, gains, fitted, shrinkage)
            return
    fitted[rows] += shrinkage * yr.mean(axis=0)


def estimate_importance(data: FeatureMatrix, targets: TargetVector, task=None, n_trees: int = 20,
                        depth: int = 3, max_rows: int = 50_000, min_leaf: int = 5,
                        shrinkage: float = 0.3, seed: int = 0) -> ImportanceVector:
    """Split-gain importance from a small gradient-boosted ensemble.

    Trees are fitted in sequence to the squared-loss residual of the ones
    before (class targets are one-hot encoded), so features that only
    matter once the dominant effect is explained still collect gain.
    """
    x = np.asarray(getattr(data, "values", data), dtype=np.float64)
    task = Task(task if task is not None else targets.task)
    y = np.asarray(getattr(targets, "values", targets))
    n, m = x.shape
    if n < 2:
        raise InputError("importance estimation needs at least two rows")
    if y.shape[0] != n:
        raise DimensionError("feature and target row counts differ")
    if not np.any(x.std(axis=0) > 0):
        raise InputError("every feature is constant")

    if n > max_rows:
        keep = np.sort(np.random.default_rng(seed).choice(n, size=max_rows, replace=False))
        x, y = x[keep], y[keep]
        n = max_rows

    if task is Task.CLASSIFICATION:
        y = np.asarray(y, dtype=np.int64)
        y = np.eye(int(y.max()) + 1)[y]
    else:
        y = np.asarray(y, dtype=np.float64).reshape(n, -1)

    gains = np.zeros(m)
    fitted = np.zeros_like(y)
    rows = np.arange(n)
    for _ in range(n_trees):
        _fit_tree(x, y - fitted, rows, depth, min_leaf, gains, fitted, shrinkage)

    if not gains.sum() > 0:
        log.warning("no split reduced impurity (constant target?); using uniform importance")
        return ImportanceVector.uniform(m, fallback=True)
    return ImportanceVector(gains)


def init_attention(forest: ForestParams, importance: Optional[ImportanceVector], cfg: InitConfig) -> ForestParams:
    """Return a copy of ``forest`` with freshly initialized attention logits."""
    out = forest.copy()
    k, n_internal, m = out.logits.shape
    rng = np.random.default_rng(cfg.seed)
    if cfg.mode is InitMode.RANDOM:
        out.logits[...] = rng.normal(0.0, 1.0 / np.sqrt(m), size=(k, n_internal, m))
        return out
    if importance is None:
        raise InputError("data-aware initialization needs an importance vector")
    scores = importance.scores if isinstance(importance, ImportanceVector) else np.asarray(importance, float)
    if scores.shape != (m,):
        raise DimensionError(f"importance has length {scores.size}, forest expects {m}")
    base = cfg.scale * np.log(scores + 1e-6 / m)
    out.logits[...] = base
    if cfg.noise_std > 0:
        out.logits += rng.normal(0.0, cfg.noise_std, size=(k, n_internal, m))
    return out


def init_thresholds_and_leaves(forest: ForestParams, cfg: Optional[InitConfig] = None) -> ForestParams:
    out = forest.copy()
    out.thresholds[...] = 0.0
    out.leaves[...] = 0.0
    return out

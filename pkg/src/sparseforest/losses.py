"""Losses with their gradients w.r.t. the raw predictions.

Every loss is averaged over samples and summed over output columns.
Cross entropy takes raw scores and applies a log-softmax internally.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from .errors import ConfigError, DimensionError, InputError


class LossKind(str, Enum):
    MSE = "mse"
    MAE = "mae"
    HUBER = "huber"
    CROSS_ENTROPY = "cross_entropy"


@dataclass(frozen=True)
class Loss:
    kind: LossKind = LossKind.MSE
    delta: float = 1.0  # huber only

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.kind is LossKind.HUBER and not self.delta > 0:
            raise ConfigError("huber delta must be positive")

    @classmethod
    def parse(cls, text: str) -> "Loss":
        """Accepts 'mse', 'mae', 'cross_entropy', 'huber' or 'huber:0.5'."""
        name, _, arg = text.strip().lower().replace("-", "_").partition(":")
        if name == "huber" and arg:
            return cls(LossKind.HUBER, float(arg))
        return cls(LossKind(name))


def _regression_targets(predictions: np.ndarray, targets) -> np.ndarray:
    y = np.asarray(targets, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape != predictions.shape:
        raise DimensionError(f"targets shape {y.shape} != predictions shape {predictions.shape}")
    return y


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def compute_loss(predictions, targets, kind=Loss()) -> Tuple[float, np.ndarray]:
    """Return ``(loss, dloss/dpredictions)``; predictions are (N, C)."""
    loss = kind if isinstance(kind, Loss) else Loss.parse(str(getattr(kind, "value", kind)))
    pred = np.asarray(predictions, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[:, None]
    n = pred.shape[0]
    if n == 0:
        raise InputError("cannot compute a loss on an empty batch")

    if loss.kind is LossKind.CROSS_ENTROPY:
        labels = np.asarray(targets)
        if labels.shape != (n,):
            raise DimensionError(f"expected {n} class labels, got shape {labels.shape}")
        labels = labels.astype(np.int64)
        if labels.min() < 0 or labels.max() >= pred.shape[1]:
            raise InputError(f"class label out of range [0, {pred.shape[1]})")
        logp = log_softmax(pred)
        rows = np.arange(n)
        value = -logp[rows, labels].sum() / n
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return float(value), grad / n

    r = pred - _regression_targets(pred, targets)
    if loss.kind is LossKind.MSE:
        return float((r * r).sum() / n), 2.0 * r / n
    if loss.kind is LossKind.MAE:
        return float(np.abs(r).sum() / n), np.sign(r) / n
    d = loss.delta
    small = np.abs(r) <= d
    value = np.where(small, 0.5 * r * r, d * (np.abs(r) - 0.5 * d))
    grad = np.where(small, r, d * np.sign(r))
    return float(value.sum() / n), grad / n

"""Minibatch training loop with validation-based early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, List, Optional, Tuple

import numpy as np

from .attention import AttentionKind, sparsity_fraction
from .data import FeatureMatrix, Standardizer, TargetVector, Task, make_batches
from .errors import ConfigError, DimensionError, InputError, NumericError
from .forest import ForestGradients, ForestParams, backward, forward
from .importance import (ImportanceVector, InitConfig, InitMode, estimate_importance, init_attention,
                         init_thresholds_and_leaves)
from .losses import Loss, LossKind, compute_loss
from .optim import OptimizerConfig, apply_update, init_state

log = logging.getLogger(__name__)

SPARSITY_THRESHOLD = 1e-3
EVAL_CHUNK = 1024


class EnsembleLossMode(str, Enum):
    LOSS_OF_MEAN = "loss_of_mean"
    MEAN_OF_LOSSES = "mean_of_losses"


@dataclass
class TrainConfig:
    num_trees: int = 256
    depth: int = 5
    batch_size: int = 512
    max_epochs: int = 100
    patience: int = 10
    loss: Loss = field(default_factory=Loss)
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(learning_rate=0.03))
    init: InitConfig = field(default_factory=InitConfig)
    attention: AttentionKind = AttentionKind.ENTMAX15
    ensemble_loss_mode: EnsembleLossMode = EnsembleLossMode.LOSS_OF_MEAN
    seed: int = 0

    def __post_init__(self):
        self.attention = AttentionKind(self.attention)
        self.ensemble_loss_mode = EnsembleLossMode(self.ensemble_loss_mode)
        if isinstance(self.loss, str):
            self.loss = Loss.parse(self.loss)
        for name in ("num_trees", "depth", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_metric: float
    elapsed: float


@dataclass
class TrainReport:
    epochs: List[EpochRecord] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    best_epoch: int = 0
    best_valid_metric: float = float("inf")
    wall_time: float = 0.0
    test_metric: Optional[float] = None
    sparsity_start: float = float("nan")
    sparsity_end: float = float("nan")
    importance: Optional[np.ndarray] = None

    @property
    def train_losses(self) -> List[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def valid_metrics(self) -> List[float]:
        return [e.valid_metric for e in self.epochs]


def loss_and_gradients(forest: ForestParams, x: np.ndarray, targets: np.ndarray, loss: Loss,
                       mode=EnsembleLossMode.LOSS_OF_MEAN) -> Tuple[float, ForestGradients]:
    """Forward + backward for one batch."""
    mode = EnsembleLossMode(mode)
    cache = forward(forest, x)
    k = forest.num_trees
    n, _, c = cache.tree_outputs.shape
    if mode is EnsembleLossMode.LOSS_OF_MEAN:
        value, up = compute_loss(cache.tree_outputs.sum(axis=1) / k, targets, loss)
        tree_up = np.broadcast_to(up[:, None, :] / k, (n, k, c))
    else:
        # average of per-tree losses == one loss over the (sample, tree) pairs
        value, up = compute_loss(cache.tree_outputs.reshape(n * k, c), np.repeat(targets, k, axis=0), loss)
        tree_up = up.reshape(n, k, c)
    return value, backward(forest, cache, tree_up)


def predict(forest: ForestParams, x, chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Raw ensemble output (N, C), evaluated in row chunks to bound memory."""
    values = np.asarray(getattr(x, "values", x), dtype=np.float64)
    parts = []
    for start in range(0, values.shape[0], chunk):
        cache = forward(forest, values[start:start + chunk])
        parts.append(cache.tree_outputs.sum(axis=1) / forest.num_trees)
    if not parts:
        return np.zeros((0, forest.output_dim))
    return np.concatenate(parts)


def dataset_loss(forest, x, targets, loss, mode=EnsembleLossMode.LOSS_OF_MEAN, chunk: int = EVAL_CHUNK) -> float:
    values = np.asarray(getattr(x, "values", x), dtype=np.float64)
    y = np.asarray(getattr(targets, "values", targets))
    total = 0.0
    for start in range(0, values.shape[0], chunk):
        xb, yb = values[start:start + chunk], y[start:start + chunk]
        cache = forward(forest, xb)
        n, k, c = cache.tree_outputs.shape
        if EnsembleLossMode(mode) is EnsembleLossMode.LOSS_OF_MEAN:
            value, _ = compute_loss(cache.tree_outputs.sum(axis=1) / k, yb, loss)
        else:
            value, _ = compute_loss(cache.tree_outputs.reshape(n * k, c), np.repeat(yb, k, axis=0), loss)
        total += value * n
    return total / values.shape[0]


def evaluate(forest: ForestParams, data, targets: TargetVector, metric: Optional[str] = None,
             standardizer: Optional[Standardizer] = None) -> float:
    """Error rate for classification, MSE (or MAE) for regression.

    With a standardizer, regression predictions are mapped back to original
    target units; standardized targets are mapped back as well.
    """
    raw = predict(forest, data)
    if targets.task is Task.CLASSIFICATION:
        metric = metric or "error_rate"
        if metric != "error_rate":
            raise InputError(f"unsupported classification metric {metric!r}")
        if targets.values.size and targets.values.max() >= raw.shape[1]:
            raise InputError("class label out of range for this model")
        return float(np.mean(np.argmax(raw, axis=1) != targets.values))

    metric = metric or "mse"
    if raw.shape[1] != 1:
        raise DimensionError("regression evaluation expects a single output column")
    pred = raw[:, 0]
    y = targets.values
    if standardizer is not None:
        pred = standardizer.inverse_predictions(pred)
        if targets.standardized:
            y = standardizer.inverse_predictions(y)
    r = pred - y
    if metric == "mse":
        return float(np.mean(r * r))
    if metric == "mae":
        return float(np.mean(np.abs(r)))
    raise InputError(f"unsupported regression metric {metric!r}")


def _mean_sparsity(forest: ForestParams) -> float:
    w = forest.attention_weights()
    return sparsity_fraction(w.reshape(-1, forest.num_features), SPARSITY_THRESHOLD)


def build_forest(cfg: TrainConfig, x: FeatureMatrix, y: TargetVector,
                 importance: Optional[ImportanceVector] = None) -> Tuple[ForestParams, Optional[ImportanceVector]]:
    """Allocate and initialize a forest for this data."""
    forest = ForestParams.zeros(cfg.num_trees, cfg.depth, x.n_cols, y.output_dim, cfg.attention)
    forest = init_thresholds_and_leaves(forest, cfg.init)
    if cfg.init.mode is InitMode.DATA_AWARE and importance is None:
        importance = estimate_importance(x, y, seed=cfg.seed)
    return init_attention(forest, importance, cfg.init), importance


def train(train_data: Tuple[FeatureMatrix, TargetVector], valid_data: Tuple[FeatureMatrix, TargetVector],
          cfg: TrainConfig, test_data=None, standardizer: Optional[Standardizer] = None,
          importance: Optional[ImportanceVector] = None, log_stream: Optional[IO[str]] = None,
          record_time: bool = True) -> Tuple[ForestParams, TrainReport]:
    """Fit a forest; returns the parameters of the best validation epoch.

    Features must already be standardized. Each epoch appends a line
    ``epoch<TAB>train_loss<TAB>valid_metric<TAB>elapsed_seconds`` to
    ``log_stream``; with ``record_time=False`` the elapsed column is 0 so
    that logs are reproducible byte for byte.
    """
    x, y = train_data
    xv, yv = valid_data
    for part in (x, xv):
        if not part.standardized:
            raise InputError("training expects standardized features")
    if xv.n_cols != x.n_cols:
        raise DimensionError("training and validation feature counts differ")
    if y.task is Task.CLASSIFICATION and cfg.loss.kind is not LossKind.CROSS_ENTROPY:
        raise ConfigError("classification requires the cross_entropy loss")
    if y.task is Task.REGRESSION and cfg.loss.kind is LossKind.CROSS_ENTROPY:
        raise ConfigError("cross_entropy needs a classification target")

    t0 = time.perf_counter()
    forest, importance = build_forest(cfg, x, y, importance)
    state = init_state(forest)
    report = TrainReport(importance=None if importance is None else importance.scores)
    report.initial_train_loss = dataset_loss(forest, x, y, cfg.loss, cfg.ensemble_loss_mode)
    report.sparsity_start = _mean_sparsity(forest)

    best = forest.copy()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        total, seen = 0.0, 0
        for b, rows in enumerate(make_batches(x.n_rows, cfg.batch_size, cfg.seed, epoch)):
            value, grads = loss_and_gradients(forest, x.values[rows], y.values[rows], cfg.loss,
                                              cfg.ensemble_loss_mode)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            try:
                apply_update(forest, grads, state, cfg.optimizer)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from None
            total += value * len(rows)
            seen += len(rows)

        metric = evaluate(forest, xv, yv, standardizer=standardizer)
        if not np.isfinite(metric):
            raise NumericError(f"non-finite validation metric at epoch {epoch}")
        elapsed = time.perf_counter() - t0 if record_time else 0.0
        rec = EpochRecord(epoch, total / seen, metric, elapsed)
        report.epochs.append(rec)
        if log_stream is not None:
            log_stream.write(f"{rec.epoch}\t{rec.train_loss:.10g}\t{rec.valid_metric:.10g}\t{rec.elapsed:.3f}\n")
        log.debug("epoch %d train_loss %.6g valid %.6g", epoch, rec.train_loss, metric)

        if metric < report.best_valid_metric:
            report.best_valid_metric = metric
            report.best_epoch = epoch
            best = forest.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    report.sparsity_end = _mean_sparsity(best)
    if test_data is not None:
        report.test_metric = evaluate(best, test_data[0], test_data[1], standardizer=standardizer)
    report.wall_time = time.perf_counter() - t0 if record_time else 0.0
    return best, report

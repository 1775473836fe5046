"""Tabular data ingestion, standardization, splitting and minibatching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, InputError, ParseError

MISSING_TOKENS = frozenset({"", "na", "nan", "n/a", "null", "?"})


class Task(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass
class FeatureMatrix:
    values: np.ndarray
    feature_names: List[str] = field(default_factory=list)
    standardized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"feature matrix must be 2-D, got shape {self.values.shape}")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.values.shape[1])]
        if len(self.feature_names) != self.values.shape[1]:
            raise DimensionError("feature name count does not match column count")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def take(self, rows) -> "FeatureMatrix":
        return replace(self, values=self.values[rows])


@dataclass
class TargetVector:
    """Regression values or dense class indices in ``[0, n_classes)``."""

    task: Task
    values: np.ndarray
    n_classes: int = 0
    class_labels: List[str] = field(default_factory=list)
    standardized: bool = False

    def __post_init__(self):
        self.task = Task(self.task)
        if self.task is Task.CLASSIFICATION:
            self.values = np.asarray(self.values, dtype=np.int64)
            if self.n_classes == 0:
                self.n_classes = int(self.values.max()) + 1 if self.values.size else 0
            if self.values.size and (self.values.min() < 0 or self.values.max() >= self.n_classes):
                raise InputError(f"class labels must lie in [0, {self.n_classes})")
        else:
            self.values = np.asarray(self.values, dtype=np.float64)
            if not np.all(np.isfinite(self.values)):
                raise InputError("regression targets must be finite")

    @property
    def output_dim(self) -> int:
        return self.n_classes if self.task is Task.CLASSIFICATION else 1

    def __len__(self) -> int:
        return len(self.values)

    def take(self, rows) -> "TargetVector":
        return replace(self, values=self.values[rows])


@dataclass
class Standardizer:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float = 0.0
    target_std: float = 1.0

    @property
    def constant_features(self) -> np.ndarray:
        return self._constant

    @classmethod
    def fit(cls, features: FeatureMatrix, targets: Optional[TargetVector] = None) -> "Standardizer":
        if features.standardized:
            raise InputError("features are already standardized; fit on the raw training split")
        x = features.values
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        constant = ~(std > 0)
        std = np.where(constant, 1.0, std)
        t_mean, t_std = 0.0, 1.0
        if targets is not None and targets.task is Task.REGRESSION:
            t_mean = float(targets.values.mean())
            t_std = float(targets.values.std())
            if not t_std > 0:
                t_std = 1.0
        out = cls(mean, std, t_mean, t_std)
        out._constant = constant
        return out

    def __post_init__(self):
        self.feature_mean = np.asarray(self.feature_mean, dtype=np.float64)
        self.feature_std = np.asarray(self.feature_std, dtype=np.float64)
        if np.any(self.feature_std <= 0):
            raise InputError("standard deviations must be positive")
        self._constant = np.zeros(self.feature_mean.shape, dtype=bool)

    def transform(self, features: FeatureMatrix) -> FeatureMatrix:
        if features.standardized:
            raise InputError("features were already standardized; refusing to apply the standardizer twice")
        if features.n_cols != self.feature_mean.size:
            raise DimensionError(f"expected {self.feature_mean.size} features, got {features.n_cols}")
        values = (features.values - self.feature_mean) / self.feature_std
        return replace(features, values=values, standardized=True)

    def transform_targets(self, targets: TargetVector) -> TargetVector:
        if targets.task is Task.CLASSIFICATION:
            return targets
        if targets.standardized:
            raise InputError("targets were already standardized")
        return replace(targets, values=(targets.values - self.target_mean) / self.target_std, standardized=True)

    def inverse_predictions(self, predictions: np.ndarray) -> np.ndarray:
        return np.asarray(predictions) * self.target_std + self.target_mean


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def load_csv(path, target_column: Union[str, int, None], has_header: bool = True,
             task: Union[Task, str] = Task.REGRESSION,
             delimiter: str = ",") -> Tuple[FeatureMatrix, Optional[TargetVector]]:
    """Read a numeric CSV, impute missing cells with column medians.

    ``target_column`` is a header name or a zero-based column index; with
    ``None`` every column is a feature and no targets are returned. For
    classification the target cells are treated as labels and mapped to
    dense indices in first-appearance order.
    """
    task = Task(task)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r]
    if not rows:
        raise FormatError(f"{path}: empty file")
    if has_header:
        header = [h.strip() for h in rows[0]]
        rows = rows[1:]
    else:
        header = [f"col{i}" for i in range(len(rows[0]))]
    if not rows:
        raise FormatError(f"{path}: no data rows")

    if target_column is None:
        t_idx = -1
    elif isinstance(target_column, int) or (isinstance(target_column, str) and target_column.isdigit()
                                          and target_column not in header):
        t_idx = int(target_column)
        if not 0 <= t_idx < len(header):
            raise InputError(f"target column index {t_idx} out of range")
    else:
        if target_column not in header:
            raise InputError(f"target column {target_column!r} not found in header")
        t_idx = header.index(target_column)

    width = len(header)
    feat_idx = [i for i in range(width) if i != t_idx]
    values = np.empty((len(rows), len(feat_idx)))
    raw_targets = []
    line_offset = 2 if has_header else 1
    for r, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(f"{path}: line {r + line_offset} has {len(row)} fields, expected {width}")
        for j, c in enumerate(feat_idx):
            cell = row[c]
            if _is_missing(cell):
                values[r, j] = np.nan
                continue
            try:
                values[r, j] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: cannot parse {cell!r} at line {r + line_offset}, column {header[c]!r}",
                                 row=r + line_offset, column=header[c]) from None
        if t_idx >= 0:
            raw_targets.append(row[t_idx].strip())

    for j in range(values.shape[1]):
        col = values[:, j]
        missing = np.isnan(col)
        if missing.any():
            present = col[~missing]
            col[missing] = np.median(present) if present.size else 0.0
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path}: non-finite feature values")

    names = [header[i] for i in feat_idx]
    if t_idx < 0:
        return FeatureMatrix(values, names), None
    if task is Task.CLASSIFICATION:
        labels: dict = {}
        idx = []
        for r, cell in enumerate(raw_targets):
            if _is_missing(cell):
                raise InputError(f"{path}: missing target at line {r + line_offset}")
            idx.append(labels.setdefault(cell, len(labels)))
        target = TargetVector(task, np.array(idx), n_classes=len(labels), class_labels=list(labels))
    else:
        try:
            y = np.array([float(c) for c in raw_targets])
        except ValueError as exc:
            raise ParseError(f"{path}: non-numeric regression target ({exc})", column=header[t_idx]) from None
        target = TargetVector(task, y)
    return FeatureMatrix(values, names), target


def split(features: FeatureMatrix, targets: TargetVector, fractions: Sequence[float], seed: int):
    """Seeded shuffle split into (train, valid[, test]) pairs.

    Every partition after the first receives floor(fraction * N) rows; all
    remaining rows go to the training partition.
    """
    if len(fractions) not in (2, 3):
        raise ConfigError("fractions must be (train, valid) or (train, valid, test)")
    if any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-9:
        raise ConfigError("fractions must be positive and sum to at most 1")
    n = features.n_rows
    if len(targets) != n:
        raise DimensionError("feature and target row counts differ")
    order = np.random.default_rng(seed).permutation(n)
    sizes = [int(math.floor(f * n + 1e-9)) for f in fractions[1:]]
    sizes.insert(0, n - sum(sizes))
    if any(s == 0 for s in sizes):
        raise ConfigError(f"split sizes {sizes} leave a partition empty")
    parts = []
    start = 0
    for s in sizes:
        rows = np.sort(order[start:start + s])
        parts.append((features.take(rows), targets.take(rows)))
        start += s
    return tuple(parts)


def make_batches(n_rows: int, batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
    """Shuffled row-index blocks for one epoch; the epoch is folded into the seed."""
    if batch_size < 1:
        raise ConfigError("batch size must be at least 1")
    order = np.random.default_rng([seed, epoch]).permutation(n_rows)
    return [order[i:i + batch_size] for i in range(0, n_rows, batch_size)]

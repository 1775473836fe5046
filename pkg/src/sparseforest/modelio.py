"""Binary model file.

Layout, all little-endian:

    offset  size  field
    0       4     magic b"QFRS"
    4       4     u32 format version (1)
    8       4     u32 M, number of features
    12      4     u32 K, number of trees
    16      4     u32 depth
    20      4     u32 C, output dimension
    24      4     u32 attention kind (0 softmax, 1 sparsemax, 2 entmax15)
    28      4     u32 task (0 regression, 1 classification)
    32      4     f32 sigmoid temperature, always 1.0
    36      ...   f32 attention logits  (K, 2^d - 1, M)
                  f32 thresholds        (K, 2^d - 1)
                  f32 leaf responses    (K, 2^d, C)
                  f32 feature means     (M,)
                  f32 feature stds      (M,)
                  f32 target mean, target std

Parameters are trained in float64 and rounded to float32 on save.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .attention import AttentionKind
from .data import Standardizer, Task
from .errors import FormatError
from .forest import ForestParams

MAGIC = b"QFRS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIIf")
_F32 = np.dtype("<f4")
_TASK_CODES = {Task.REGRESSION: 0, Task.CLASSIFICATION: 1}


@dataclass
class SavedModel:
    forest: ForestParams
    standardizer: Standardizer
    task: Task = Task.REGRESSION


def payload_size(m: int, k: int, depth: int, c: int) -> int:
    n_internal = 2 ** depth - 1
    n_floats = k * n_internal * m + k * n_internal + k * (n_internal + 1) * c + 2 * m + 2
    return _HEADER.size + 4 * n_floats


def to_bytes(forest: ForestParams, standardizer: Standardizer, task=Task.REGRESSION) -> bytes:
    task = Task(task)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, forest.num_features, forest.num_trees, forest.depth,
                          forest.output_dim, forest.attention.code, _TASK_CODES[task], 1.0)
    body = np.concatenate([
        forest.logits.ravel(), forest.thresholds.ravel(), forest.leaves.ravel(),
        standardizer.feature_mean, standardizer.feature_std,
        [standardizer.target_mean, standardizer.target_std],
    ]).astype(_F32)
    return header + body.tobytes()


def from_bytes(blob: bytes) -> SavedModel:
    if len(blob) < _HEADER.size:
        raise FormatError(f"header truncated: {len(blob)} of {_HEADER.size} bytes")
    magic, version, m, k, depth, c, kind, task, temperature = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"magic: expected {MAGIC!r}, found {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"format_version: unsupported version {version}")
    if m < 1 or k < 1 or depth < 1 or c < 1:
        raise FormatError(f"header: invalid dimensions M={m} K={k} depth={depth} C={c}")
    if depth > 24:
        raise FormatError(f"depth: {depth} is not a plausible tree depth")
    if kind not in (0, 1, 2):
        raise FormatError(f"attention_kind: unknown code {kind}")
    if task not in (0, 1):
        raise FormatError(f"task: unknown code {task}")
    if temperature != 1.0:
        raise FormatError(f"temperature: only 1.0 is supported, found {temperature}")
    expected = payload_size(m, k, depth, c)
    if len(blob) != expected:
        what = "truncated" if len(blob) < expected else "has trailing bytes"
        raise FormatError(f"payload: file {what} ({len(blob)} bytes, expected {expected})")

    body = np.frombuffer(blob, dtype=_F32, offset=_HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(body)):
        raise FormatError("payload: non-finite parameter values")
    n_internal = 2 ** depth - 1
    sizes = [k * n_internal * m, k * n_internal, k * (n_internal + 1) * c, m, m, 2]
    chunks = np.split(body, np.cumsum(sizes)[:-1])
    forest = ForestParams(
        logits=chunks[0].reshape(k, n_internal, m),
        thresholds=chunks[1].reshape(k, n_internal),
        leaves=chunks[2].reshape(k, n_internal + 1, c),
        attention=AttentionKind.from_code(kind),
    )
    if np.any(chunks[4] <= 0):
        raise FormatError("standardizer: non-positive feature std")
    std = Standardizer(chunks[3], chunks[4], float(chunks[5][0]), float(chunks[5][1]))
    return SavedModel(forest, std, Task.CLASSIFICATION if task == 1 else Task.REGRESSION)


def save_model(forest: ForestParams, standardizer: Standardizer, path, task=Task.REGRESSION) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(forest, standardizer, task))


def load_model(path) -> SavedModel:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())

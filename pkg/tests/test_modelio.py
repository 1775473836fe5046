import struct

import numpy as np
import pytest

from sparseforest.data import Standardizer, Task
from sparseforest.errors import FormatError
from sparseforest.forest import ForestParams, forest_forward
from sparseforest.modelio import from_bytes, load_model, payload_size, save_model, to_bytes


def random_model(seed=0, k=3, depth=3, m=5, c=2, kind="entmax15"):
    rng = np.random.default_rng(seed)
    n_internal = 2 ** depth - 1
    forest = ForestParams(rng.normal(size=(k, n_internal, m)), rng.normal(size=(k, n_internal)),
                          rng.normal(size=(k, n_internal + 1, c)), kind)
    std = Standardizer(rng.normal(size=m), rng.uniform(0.5, 2.0, size=m), 1.5, 2.5)
    return forest, std


def test_header_fields(tmp_path):
    forest, std = random_model(kind="sparsemax")
    save_model(forest, std, tmp_path / "m.qf", Task.CLASSIFICATION)
    blob = (tmp_path / "m.qf").read_bytes()
    assert blob[:4] == b"QFRS"
    assert struct.unpack_from("<IIIIIIIf", blob, 4) == (1, 5, 3, 3, 2, 1, 1, 1.0)
    assert len(blob) == payload_size(5, 3, 3, 2)

    loaded = load_model(tmp_path / "m.qf")
    assert loaded.task is Task.CLASSIFICATION
    f = loaded.forest
    assert (f.num_features, f.num_trees, f.depth, f.output_dim, f.attention.value) == (5, 3, 3, 2, "sparsemax")


def test_roundtrip_parameters_within_float32():
    forest, std = random_model()
    loaded = from_bytes(to_bytes(forest, std))
    for name, arr in forest.arrays().items():
        np.testing.assert_allclose(loaded.forest.arrays()[name], arr, rtol=2 ** -24)
    np.testing.assert_allclose(loaded.standardizer.feature_std, std.feature_std, rtol=2 ** -24)
    assert loaded.standardizer.target_mean == np.float32(1.5)


def test_roundtrip_predictions():
    forest, std = random_model(seed=1, k=8, depth=4, m=10, c=1)
    x = np.random.default_rng(2).normal(size=(200, 10))
    before = forest_forward(forest, x)
    after = forest_forward(from_bytes(to_bytes(forest, std)).forest, x)
    assert np.max(np.abs(after - before)) / np.max(np.abs(before)) < 1e-5


def test_every_truncation_is_rejected():
    forest, std = random_model(k=1, depth=2, m=2, c=1)
    blob = to_bytes(forest, std)
    for cut in range(len(blob)):
        with pytest.raises(FormatError):
            from_bytes(blob[:cut])
    with pytest.raises(FormatError, match="payload"):
        from_bytes(blob + b"\0")


@pytest.mark.parametrize("offset, value, field", [
    (0, b"QFRX", "magic"),
    (4, struct.pack("<I", 2), "format_version"),
    (24, struct.pack("<I", 7), "attention_kind"),
    (28, struct.pack("<I", 5), "task"),
    (32, struct.pack("<f", 2.0), "temperature"),
])
def test_corrupted_header_names_the_field(offset, value, field):
    blob = bytearray(to_bytes(*random_model()))
    blob[offset:offset + len(value)] = value
    with pytest.raises(FormatError, match=field):
        from_bytes(bytes(blob))


def test_non_finite_payload_rejected():
    blob = bytearray(to_bytes(*random_model()))
    blob[40:44] = struct.pack("<f", float("nan"))
    with pytest.raises(FormatError, match="non-finite"):
        from_bytes(bytes(blob))

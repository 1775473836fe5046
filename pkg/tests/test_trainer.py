import io

import numpy as np
import pytest

from synthetic import linear, standardized_split
from sparseforest.data import FeatureMatrix, Standardizer, TargetVector
from sparseforest.errors import ConfigError, InputError, NumericError
from sparseforest.forest import ForestParams
from sparseforest.importance import InitConfig
from sparseforest.losses import Loss
from sparseforest.optim import OptimizerConfig
from sparseforest.trainer import (EnsembleLossMode, TrainConfig, build_forest, evaluate, loss_and_gradients,
                                  train)


@pytest.fixture(scope="module")
def small_linear():
    x, y = linear(n=600, m=6, seed=3)
    parts, std = standardized_split(x, y, seed=3)
    return parts, std


def small_config(**overrides):
    base = dict(num_trees=8, depth=3, batch_size=128, max_epochs=3, patience=10)
    base.update(overrides)
    return TrainConfig(**base)


def test_zero_learning_rate_epoch(small_linear):
    (tr, va), _ = small_linear
    cfg = small_config(max_epochs=1, optimizer=OptimizerConfig(learning_rate=0.0))
    initial, _ = build_forest(cfg, *tr)
    best, report = train(tr, va, cfg)
    assert len(report.epochs) == 1
    for name, arr in best.arrays().items():
        np.testing.assert_array_equal(arr, initial.arrays()[name])


def test_loss_modes_agree_for_one_tree():
    rng = np.random.default_rng(0)
    forest = ForestParams(rng.normal(size=(1, 7, 4)), rng.normal(size=(1, 7)), rng.normal(size=(1, 8, 3)))
    x = rng.normal(size=(20, 4))
    labels = rng.integers(0, 3, size=20)
    a = loss_and_gradients(forest, x, labels, Loss("cross_entropy"), EnsembleLossMode.LOSS_OF_MEAN)
    b = loss_and_gradients(forest, x, labels, Loss("cross_entropy"), EnsembleLossMode.MEAN_OF_LOSSES)
    assert abs(a[0] - b[0]) < 1e-15
    for name in a[1].arrays():
        np.testing.assert_allclose(a[1].arrays()[name], b[1].arrays()[name], atol=1e-15)


def test_mean_of_losses_averages_tree_losses():
    rng = np.random.default_rng(1)
    forest = ForestParams(rng.normal(size=(3, 3, 2)), rng.normal(size=(3, 3)), rng.normal(size=(3, 4, 1)))
    x, y = rng.normal(size=(10, 2)), rng.normal(size=10)
    per_tree = [loss_and_gradients(ForestParams(forest.logits[h:h + 1], forest.thresholds[h:h + 1],
                                                forest.leaves[h:h + 1]), x, y, Loss())[0] for h in range(3)]
    value, _ = loss_and_gradients(forest, x, y, Loss(), EnsembleLossMode.MEAN_OF_LOSSES)
    assert abs(value - np.mean(per_tree)) < 1e-14


@pytest.mark.parametrize("mode", list(EnsembleLossMode))
def test_full_batch_sgd_step_matches_gradient(small_linear, mode):
    (tr, va), _ = small_linear
    lr = 0.05
    cfg = small_config(batch_size=tr[0].n_rows, max_epochs=1, ensemble_loss_mode=mode,
                       optimizer=OptimizerConfig(kind="sgd", learning_rate=lr))
    initial, _ = build_forest(cfg, *tr)
    _, grads = loss_and_gradients(initial, tr[0].values, tr[1].values, cfg.loss, mode)
    stepped, _ = train(tr, va, cfg)
    for name, arr in stepped.arrays().items():
        np.testing.assert_allclose(arr, initial.arrays()[name] - lr * grads.arrays()[name], rtol=0, atol=1e-12)


def test_best_epoch_has_minimum_metric(small_linear):
    (tr, va), std = small_linear
    best, report = train(tr, va, small_config(max_epochs=6), standardizer=std)
    assert report.best_valid_metric == min(report.valid_metrics)
    assert report.valid_metrics[report.best_epoch - 1] == report.best_valid_metric
    assert evaluate(best, *va, standardizer=std) == report.best_valid_metric
    assert 1 <= report.best_epoch <= len(report.epochs)


def test_patience_stops_early(small_linear):
    (tr, va), _ = small_linear
    _, report = train(tr, va, small_config(max_epochs=50, patience=1, optimizer=OptimizerConfig(learning_rate=0.0)))
    # nothing changes, so the second epoch is never an improvement
    assert len(report.epochs) == 2


def test_reproducible_reports_and_logs(small_linear):
    (tr, va), std = small_linear
    outputs = []
    for _ in range(2):
        buf = io.StringIO()
        best, report = train(tr, va, small_config(), standardizer=std, log_stream=buf, record_time=False)
        outputs.append((best, report, buf.getvalue()))
    (b1, r1, l1), (b2, r2, l2) = outputs
    assert l1 == l2 and len(l1.splitlines()) == 3
    assert r1.train_losses == r2.train_losses and r1.valid_metrics == r2.valid_metrics
    assert (r1.sparsity_start, r1.sparsity_end) == (r2.sparsity_start, r2.sparsity_end)
    for name in b1.arrays():
        np.testing.assert_array_equal(b1.arrays()[name], b2.arrays()[name])


def test_log_format(small_linear):
    (tr, va), _ = small_linear
    buf = io.StringIO()
    train(tr, va, small_config(max_epochs=2), log_stream=buf)
    for i, line in enumerate(buf.getvalue().splitlines(), start=1):
        fields = line.split("\t")
        assert len(fields) == 4 and int(fields[0]) == i
        assert all(np.isfinite(float(f)) for f in fields[1:])


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_loss_aborts_with_location():
    x = FeatureMatrix(np.random.default_rng(0).normal(size=(40, 3)), standardized=True)
    y = TargetVector("regression", np.full(40, 1e200))
    with pytest.raises(NumericError, match="epoch 1, batch 0"):
        train((x, y), (x, y), small_config(batch_size=16, init=InitConfig(mode="random")))


def test_task_and_loss_must_match(small_linear):
    (tr, va), _ = small_linear
    with pytest.raises(ConfigError):
        train(tr, va, small_config(loss=Loss("cross_entropy")))
    raw = FeatureMatrix(np.zeros((4, 6)))
    with pytest.raises(InputError):
        train((raw, tr[1]), va, small_config())


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(patience=0)
    assert TrainConfig(loss="huber:2").loss == Loss("huber", 2.0)


def test_evaluate_examples():
    rng = np.random.default_rng(4)
    x = FeatureMatrix(rng.normal(size=(500, 3)))
    forest = ForestParams.zeros(2, 2, 3, 1)

    # constant leaves equal to the target: perfect regression
    forest.leaves[:] = 2.0
    assert evaluate(forest, x, TargetVector("regression", np.full(500, 2.0))) < 1e-28

    # zero standardized output predicts the training mean: MSE is the variance
    y = TargetVector("regression", rng.normal(loc=3.0, scale=2.0, size=500))
    std = Standardizer(np.zeros(3), np.ones(3), float(y.values.mean()), 1.0)
    forest.leaves[:] = 0.0
    assert abs(evaluate(forest, x, y, standardizer=std) - y.values.var()) < 1e-8

    # a model that always favours class 1
    clf = ForestParams.zeros(2, 2, 3, 3)
    clf.leaves[..., 1] = 1.0
    assert evaluate(clf, x, TargetVector("classification", np.ones(500, dtype=int), n_classes=3)) == 0.0


def test_random_guess_error_rate():
    rng = np.random.default_rng(5)
    c, n = 4, 20000
    forest = ForestParams(rng.normal(size=(3, 7, 5)), rng.normal(size=(3, 7)), rng.normal(size=(3, 8, c)))
    labels = TargetVector("classification", rng.integers(0, c, size=n), n_classes=c)
    err = evaluate(forest, FeatureMatrix(rng.normal(size=(n, 5))), labels)
    # binomial standard error is about 0.003 here
    assert abs(err - (1 - 1 / c)) < 0.015

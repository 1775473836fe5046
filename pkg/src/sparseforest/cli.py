"""Command-line interface.

    sparseforest train --data d.csv --target y [--valid v.csv] [--test t.csv] ...
    sparseforest predict --model m.qf --data d.csv --out preds.csv
    sparseforest export-attention --model m.qf --count 120 --format pgm --out a.pgm
    sparseforest importance --data d.csv --target y --out imp.csv

Exit status: 0 success, 1 usage/config/data error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .attention import AttentionKind
from .data import Standardizer, Task, TargetVector, load_csv, split
from .errors import ConfigError, ForestError, InputError, NumericError
from .importance import ImportanceVector, InitConfig, estimate_importance
from .losses import Loss, log_softmax
from .modelio import load_model, save_model
from .optim import OptimizerConfig
from .trainer import TrainConfig, evaluate, predict, train

log = logging.getLogger("sparseforest")

_BOOL_FLAGS = {"no_header", "deterministic"}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class UsageError(ForestError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _add_csv_flags(p):
    p.add_argument("--no-header", action="store_true", help="CSV has no header row")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--task", choices=[t.value for t in Task], default=Task.REGRESSION.value)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparseforest", description="Differentiable forests with sparse attention.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a forest and save it")
    t.add_argument("--config", help="file of `key = value` lines; flags take precedence")
    t.add_argument("--data")
    t.add_argument("--target")
    t.add_argument("--valid")
    t.add_argument("--test")
    t.add_argument("--valid-fraction", type=float, default=0.1)
    t.add_argument("--test-fraction", type=float, default=0.1)
    t.add_argument("--trees", type=int, default=256)
    t.add_argument("--depth", type=int, default=5)
    t.add_argument("--batch", type=int, default=512)
    t.add_argument("--lr", type=float, default=0.03)
    t.add_argument("--weight-decay", type=float, default=0.0)
    t.add_argument("--optimizer", choices=["sgd", "adam", "qhadam"], default="qhadam")
    t.add_argument("--attention", choices=[k.value for k in AttentionKind], default="entmax15")
    t.add_argument("--init", choices=["random", "data-aware"], default="data-aware")
    t.add_argument("--init-noise", type=float, default=1.0)
    t.add_argument("--init-scale", type=float, default=1.0)
    t.add_argument("--import-importance", help="CSV of feature_name,importance to seed the attention")
    t.add_argument("--loss", help="mse | mae | huber[:delta] | cross_entropy (default by task)")
    t.add_argument("--ensemble-loss", choices=["loss_of_mean", "mean_of_losses"], default="loss_of_mean")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="model.qf")
    t.add_argument("--log", help="metrics TSV path (default: <out>.log.tsv)")
    t.add_argument("--deterministic", action="store_true",
                   help="single-threaded BLAS and a zeroed time column, for byte-identical reruns")
    _add_csv_flags(t)

    p = sub.add_parser("predict", help="write predictions for a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", help="target column to drop (and score against) if present")
    p.add_argument("--no-header", action="store_true")
    p.add_argument("--delimiter", default=",")

    e = sub.add_parser("export-attention", help="dump mapped attention of sampled nodes as a heatmap grid")
    e.add_argument("--model", required=True)
    e.add_argument("--count", type=int, default=120)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--format", choices=["csv", "pgm"], default="csv")
    e.add_argument("--out", required=True)

    i = sub.add_parser("importance", help="estimate per-feature importance")
    i.add_argument("--data", required=True)
    i.add_argument("--target", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--seed", type=int, default=0)
    _add_csv_flags(i)
    return parser


def read_config(path: str) -> Dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected `key = value`")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.error("a command is required")
    if getattr(args, "config", None):
        cfg = read_config(args.config)
        sp = _subparser(parser, args.command)
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - known - {"config"})
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {', '.join(unknown)}")
        choices = {a.dest: a.choices for a in sp._actions if a.choices is not None}
        defaults = {}
        for key, value in cfg.items():
            if key in choices and value not in choices[key]:
                raise ConfigError(f"{args.config}: {key} must be one of {', '.join(choices[key])}, got {value!r}")
            if key in _BOOL_FLAGS:
                if value.lower() not in _TRUE | _FALSE:
                    raise ConfigError(f"{args.config}: {key} expects a boolean, got {value!r}")
                defaults[key] = value.lower() in _TRUE
            else:
                defaults[key] = value
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


# heatmap export

def attention_grid(forest, count: int, seed: int) -> np.ndarray:
    """Mapped attention of ``count`` nodes drawn uniformly without replacement, (M, count)."""
    if count < 1:
        raise InputError("count must be at least 1")
    weights = forest.attention_weights().reshape(-1, forest.num_features)
    total = weights.shape[0]
    if count > total:
        log.warning("requested %d vectors but the model has only %d internal nodes; clamping", count, total)
        count = total
    picks = np.random.default_rng(seed).choice(total, size=count, replace=False)
    return weights[picks].T.copy()


def write_grid_csv(grid: np.ndarray, path: str) -> None:
    np.savetxt(path, grid, delimiter=",", fmt="%.17g")


def grid_to_pgm(grid: np.ndarray) -> bytes:
    height, width = grid.shape
    pixels = np.floor(np.clip(grid, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def read_importance_csv(path: str, feature_names: List[str]) -> ImportanceVector:
    scores = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if len(row) < 2 or row[0].strip().lower() in ("feature", "feature_name"):
                continue
            try:
                scores[row[0].strip()] = float(row[1])
            except ValueError:
                raise InputError(f"{path}: bad importance value {row[1]!r}") from None
    missing = [n for n in feature_names if n not in scores]
    if missing:
        raise InputError(f"{path}: no importance for features {', '.join(missing[:5])}")
    return ImportanceVector(np.array([scores[n] for n in feature_names]))


def _labels_path(model_path: str) -> str:
    return model_path + ".labels.json"


def _load(path, target, args):
    return load_csv(path, target, has_header=not args.no_header, task=args.task, delimiter=args.delimiter)


def cmd_train(args) -> int:
    if not args.data or not args.target:
        raise UsageError("train: --data and --target are required")
    task = Task(args.task)
    x, y = _load(args.data, args.target, args)
    if args.valid:
        train_part = (x, y)
        valid_part = _load(args.valid, args.target, args)
        test_part = _load(args.test, args.target, args) if args.test else None
    else:
        fractions = [1.0 - args.valid_fraction - (args.test_fraction if not args.test else 0.0),
                     args.valid_fraction]
        if not args.test:
            fractions.append(args.test_fraction)
        parts = split(x, y, fractions, args.seed)
        train_part, valid_part = parts[0], parts[1]
        test_part = parts[2] if len(parts) == 3 else _load(args.test, args.target, args)
    if task is Task.CLASSIFICATION:
        _align_labels(y, [p for p in (valid_part, test_part) if p is not None and p is not train_part])

    std = Standardizer.fit(*train_part)
    if np.any(std.constant_features):
        log.warning("constant features: %s", ", ".join(np.array(x.feature_names)[std.constant_features]))

    def prep(part):
        return None if part is None else (std.transform(part[0]), std.transform_targets(part[1]))

    train_s, valid_s, test_s = prep(train_part), prep(valid_part), prep(test_part)
    importance = None
    if args.import_importance:
        importance = read_importance_csv(args.import_importance, x.feature_names)

    default_loss = "cross_entropy" if task is Task.CLASSIFICATION else "mse"
    cfg = TrainConfig(
        num_trees=args.trees, depth=args.depth, batch_size=args.batch, max_epochs=args.epochs,
        patience=args.patience, loss=Loss.parse(args.loss or default_loss),
        optimizer=OptimizerConfig(kind=args.optimizer, learning_rate=args.lr, weight_decay=args.weight_decay),
        init=InitConfig(mode=args.init, scale=args.init_scale, noise_std=args.init_noise, seed=args.seed),
        attention=args.attention, ensemble_loss_mode=args.ensemble_loss, seed=args.seed,
    )
    log_path = args.log or args.out + ".log.tsv"
    limits = contextlib.nullcontext()
    if args.deterministic:
        from threadpoolctl import threadpool_limits
        limits = threadpool_limits(limits=1)
    with limits, open(log_path, "w", encoding="utf-8", newline="\n") as log_fh:
        forest, report = train(train_s, valid_s, cfg, test_data=test_s, standardizer=std,
                               importance=importance, log_stream=log_fh, record_time=not args.deterministic)
    save_model(forest, std, args.out, task)
    if task is Task.CLASSIFICATION:
        with open(_labels_path(args.out), "w", encoding="utf-8") as fh:
            json.dump(y.class_labels, fh)

    metric = "error_rate" if task is Task.CLASSIFICATION else "mse"
    print(f"best_epoch={report.best_epoch} valid_{metric}={report.best_valid_metric:.10g}")
    if report.test_metric is not None:
        print(f"test_{metric}={report.test_metric:.10g}")
    print(f"attention_sparsity start={report.sparsity_start:.4f} end={report.sparsity_end:.4f}")
    return 0


def _align_labels(reference: TargetVector, parts) -> None:
    # separately loaded files number their labels by their own first appearance
    lookup = {lab: i for i, lab in enumerate(reference.class_labels)}
    for _, target in parts:
        if target.class_labels == reference.class_labels or not target.class_labels:
            continue
        unknown = [lab for lab in target.class_labels if lab not in lookup]
        if unknown:
            raise InputError(f"labels {unknown[:5]} do not occur in the training data")
        remap = np.array([lookup[lab] for lab in target.class_labels])
        target.values = remap[target.values]
        target.class_labels = list(reference.class_labels)
        target.n_classes = reference.n_classes


def cmd_predict(args) -> int:
    model = load_model(args.model)
    forest, std = model.forest, model.standardizer
    classification = model.task is Task.CLASSIFICATION
    target = None
    if args.target is not None:
        x, target = load_csv(args.data, args.target, has_header=not args.no_header,
                             task=model.task, delimiter=args.delimiter)
    else:
        x, _ = load_csv(args.data, None, has_header=not args.no_header, delimiter=args.delimiter)
    if x.n_cols != forest.num_features:
        raise InputError(f"model expects {forest.num_features} feature columns, data has {x.n_cols}")

    xs = std.transform(x)
    raw = predict(forest, xs)
    labels = None
    if classification:
        try:
            with open(_labels_path(args.model), encoding="utf-8") as fh:
                labels = json.load(fh)
        except FileNotFoundError:
            labels = None
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if classification:
            probs = np.exp(log_softmax(raw))
            cls = np.argmax(raw, axis=1)
            w.writerow(["class"] + (["label"] if labels else []) + [f"p{c}" for c in range(raw.shape[1])])
            for c, row in zip(cls, probs):
                w.writerow([int(c)] + ([labels[c]] if labels else []) + [repr(float(v)) for v in row])
        else:
            w.writerow(["prediction"])
            for v in std.inverse_predictions(raw[:, 0]):
                w.writerow([repr(float(v))])

    if target is not None:
        if classification:
            if labels is None:
                raise InputError("cannot score class labels without the model's .labels.json file")
            _align_labels(TargetVector(Task.CLASSIFICATION, np.arange(len(labels)), len(labels), labels), [(x, target)])
            print(f"error_rate={evaluate(forest, xs, target):.10g}")
        else:
            print(f"mse={evaluate(forest, xs, target, standardizer=std):.10g}")
    return 0


def cmd_export_attention(args) -> int:
    model = load_model(args.model)
    grid = attention_grid(model.forest, args.count, args.seed)
    if args.format == "csv":
        write_grid_csv(grid, args.out)
    else:
        with open(args.out, "wb") as fh:
            fh.write(grid_to_pgm(grid))
    print(f"wrote {grid.shape[0]}x{grid.shape[1]} attention grid to {args.out}")
    return 0


def cmd_importance(args) -> int:
    x, y = _load(args.data, args.target, args)
    imp = estimate_importance(x, y, seed=args.seed)
    if imp.fallback:
        print("warning: no split reduced impurity (constant target?); importance is uniform", file=sys.stderr)
    order = np.argsort(-imp.scores, kind="stable")
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "importance"])
        for j in order:
            w.writerow([x.feature_names[j], repr(float(imp.scores[j]))])
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "export-attention": cmd_export_attention,
    "importance": cmd_importance,
}


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ForestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        _subparser(build_parser(), args.command).print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 1
    except (ForestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

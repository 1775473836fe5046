"""Parameter updates: plain SGD, Adam and QHAdam.

QHAdam (Ma & Yarats) mixes the raw gradient into both Adam moments:

    m <- b1 m + (1 - b1) g            v <- b2 v + (1 - b2) g^2
    step = ((1 - nu1) g + nu1 m_hat) / (sqrt((1 - nu2) g^2 + nu2 v_hat) + eps)

and becomes Adam exactly at nu1 = nu2 = 1. Weight decay is decoupled and
applied before the adaptive step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict

import numpy as np

from .errors import ConfigError, DimensionError, NumericError


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"
    QHADAM = "qhadam"


@dataclass
class OptimizerConfig:
    kind: OptimizerKind = OptimizerKind.QHADAM
    learning_rate: float = 1e-3
    beta1: float = 0.995
    beta2: float = 0.999
    nu1: float = 0.7
    nu2: float = 1.0
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        self.kind = OptimizerKind(self.kind)
        values = [self.learning_rate, self.beta1, self.beta2, self.nu1, self.nu2, self.epsilon, self.weight_decay]
        if not all(np.isfinite(v) for v in values):
            raise ConfigError("optimizer hyperparameters must be finite")
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be nonnegative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not (0 <= self.nu1 <= 1 and 0 <= self.nu2 <= 1):
            raise ConfigError("nu1 and nu2 must lie in [0, 1]")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be nonnegative")


@dataclass
class OptimizerState:
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def init_state(params) -> OptimizerState:
    arrays = params.arrays()
    return OptimizerState(
        step_count=0,
        first_moment={k: np.zeros_like(v) for k, v in arrays.items()},
        second_moment={k: np.zeros_like(v) for k, v in arrays.items()},
    )


def apply_update(params, grads, state: OptimizerState, cfg: OptimizerConfig):
    """Take one step in place and return ``(params, state)``.

    ``params`` and ``grads`` are anything exposing ``arrays()`` with matching
    keys (ForestParams / ForestGradients). Non-finite gradients are refused
    before anything is touched.
    """
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if p_arrays.keys() != g_arrays.keys():
        raise DimensionError("gradient blocks do not match parameter blocks")
    for name, p in p_arrays.items():
        g = g_arrays[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        if state.first_moment and state.first_moment[name].shape != p.shape:
            raise DimensionError(f"optimizer state for {name!r} does not match the parameters")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name!r}; update refused")

    t = state.step_count + 1
    lr = cfg.learning_rate
    for name, p in p_arrays.items():
        g = g_arrays[name]
        if cfg.weight_decay:
            p -= lr * cfg.weight_decay * p
        if cfg.kind is OptimizerKind.SGD:
            p -= lr * g
            continue
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        if cfg.kind is OptimizerKind.QHADAM:
            num = (1.0 - cfg.nu1) * g + cfg.nu1 * m_hat
            den = np.sqrt((1.0 - cfg.nu2) * (g * g) + cfg.nu2 * v_hat) + cfg.epsilon
        else:
            num = m_hat
            den = np.sqrt(v_hat) + cfg.epsilon
        p -= lr * (num / den)
    state.step_count = t
    return params, state

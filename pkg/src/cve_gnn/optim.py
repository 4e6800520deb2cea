"""Generalized Adam-type updates: a first-moment EMA plus a kind-specific
second-moment statistic.

    M_t = beta1 * M_{t-1} + (1 - beta1) * G_t
    W   = W - lr * M_t / sqrt(V_t + eps)

V_t per kind: sgd and heavy-ball keep V = 1 (and skip eps so the update is
exactly W - lr * M_t); adam uses an EMA of squared gradients; amsgrad takes
the running entrywise max of that EMA; adagrad uses the arithmetic mean of
all squared gradients so far.
"""

from dataclasses import dataclass

import numpy as np

from cve_gnn.model import Gradient, ModelParams

OPTIMIZER_KINDS = ("sgd", "heavy-ball", "adam", "amsgrad", "adagrad")
_ADAPTIVE = ("adam", "amsgrad", "adagrad")


class NonFiniteGradientError(RuntimeError):
    """A gradient entry was NaN or infinite."""


@dataclass
class OptimizerConfig:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    adam_bias_correction: bool = False

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.kind == "sgd":
            self.beta1 = 0.0
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError("beta1 must be in [0, 1)")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta2 must be in [0, 1)")
        if self.eps < 0 or self.weight_decay < 0:
            raise ValueError("eps and weight_decay must be nonnegative")


@dataclass
class OptimizerState:
    """First/second-moment accumulators, all zero- or one-initialized.

    ``aux`` is kind-specific: the pre-max EMA for amsgrad, the running sum
    of squared gradients for adagrad, unused otherwise.
    """

    m: list
    v: list
    aux: list | None
    t: int = 0


def init_state(params: ModelParams, config: OptimizerConfig) -> OptimizerState:
    zeros = lambda: [np.zeros_like(w) for w in params.weights]
    if config.kind in ("sgd", "heavy-ball"):
        v = [np.ones_like(w) for w in params.weights]
        aux = None
    else:
        v = zeros()
        aux = zeros()
    return OptimizerState(m=zeros(), v=v, aux=aux)


def step(state: OptimizerState, params: ModelParams, grads: Gradient,
         config: OptimizerConfig) -> None:
    """One in-place update of params and state from the gradient."""
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NonFiniteGradientError(
                f"{bad} non-finite gradient entries in layer {k} at step {state.t + 1}")

    state.t += 1
    t = state.t
    b1, b2 = config.beta1, config.beta2
    for k, g in enumerate(grads):
        m = state.m[k]
        m *= b1
        m += (1.0 - b1) * g

        kind = config.kind
        if kind in ("sgd", "heavy-ball"):
            params.weights[k] -= config.lr * m
            continue

        if kind == "adam":
            v = state.v[k]
            v *= b2
            v += (1.0 - b2) * np.square(g)
            if config.adam_bias_correction:
                m_hat = m / (1.0 - b1 ** t)
                v_hat = v / (1.0 - b2 ** t)
                params.weights[k] -= config.lr * m_hat / np.sqrt(v_hat + config.eps)
            else:
                params.weights[k] -= config.lr * m / np.sqrt(v + config.eps)
        elif kind == "amsgrad":
            aux = state.aux[k]
            aux *= b2
            aux += (1.0 - b2) * np.square(g)
            np.maximum(state.v[k], aux, out=state.v[k])
            params.weights[k] -= config.lr * m / np.sqrt(state.v[k] + config.eps)
        elif kind == "adagrad":
            state.aux[k] += np.square(g)
            state.v[k] = state.aux[k] / t
            params.weights[k] -= config.lr * m / np.sqrt(state.v[k] + config.eps)

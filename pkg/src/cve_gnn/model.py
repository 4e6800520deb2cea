"""GCN forward passes, loss, manual reverse-mode gradients, activation cache.

The exact forward aggregates with the full propagation matrix at every
layer. The cheap training forward replaces the aggregation of the deviation
from cached activations with a sampled, rescaled aggregation:

    Z[k+1] = (sampled[k] @ (H[k] - cached[k]) + prop @ cached[k]) @ W[k]

evaluated only on the receptive-field rows the minibatch needs. Backward
treats the cached activations as constants, so gradient flows only through
the recursively computed path; this is the (deliberate) source of the
stepsize-proportional gradient bias probed in :mod:`cve_gnn.diagnostics`.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cve_gnn.graph_core import SparsePropagation, spmm, spmm_t
from cve_gnn.sampling import MinibatchPlan

Gradient = list  # one array per weight matrix, same shapes


class CacheMismatchError(ValueError):
    """Cache layer shapes are incompatible with the model dimensions."""


@dataclass
class ModelParams:
    """Trainable weight matrices W[k] of shape (d_k, d_{k+1})."""

    weights: list

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights])


def glorot_params(dims, rng: np.random.Generator, dtype=np.float64) -> ModelParams:
    """Glorot-uniform initialization for the given layer dimensions."""
    weights = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype))
    return ModelParams(weights)


class HistoricalCache:
    """Stale per-layer activations, refreshed for nodes a plan touches.

    ``layers[0]`` is the feature matrix itself and is never rewritten;
    ``layers[k]`` for k >= 1 holds the last computed activations of layer k
    for every node (shape n x d_k).
    """

    def __init__(self, features: np.ndarray, hidden: list):
        self.layers = [features, *hidden]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def check_model(self, features: np.ndarray, params: ModelParams):
        dims = params.dims
        if self.num_layers != params.num_layers:
            raise CacheMismatchError(
                f"cache has {self.num_layers} layers, model needs {params.num_layers}")
        n = features.shape[0]
        for k, layer in enumerate(self.layers):
            if layer.shape != (n, dims[k]):
                raise CacheMismatchError(
                    f"cache layer {k} has shape {layer.shape}, expected {(n, dims[k])}")


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def log_softmax_rows(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass
class ForwardTrace:
    """Everything backward needs: per-layer values on receptive-field rows.

    ``acts[k]`` are activations on rows ``plan.fields[k]`` (``acts[-1]``
    holds class probabilities), ``pres[k]`` the pre-activations of layer
    k+1, ``inputs[k]`` the (dropout-masked) aggregated inputs to the k-th
    linear map, ``masks[k]`` the folded dropout mask or None.
    """

    plan: MinibatchPlan
    acts: list
    pres: list
    inputs: list
    masks: list


def apply_dropout(matrix: np.ndarray, rate: float, rng: np.random.Generator,
                  training: bool = True):
    """Inverted dropout; returns (output, mask) with the keep-scale folded in."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return matrix, np.ones_like(matrix)
    mask = (rng.random(matrix.shape) >= rate).astype(matrix.dtype)
    mask /= 1.0 - rate
    return matrix * mask, mask


def forward_exact(prop: SparsePropagation, features: np.ndarray, params: ModelParams,
                  nodes: np.ndarray | None = None, return_logits: bool = False) -> np.ndarray:
    """Full-propagation forward pass; no sampling, no dropout.

    Returns class-probability rows (or pre-softmax logits) for ``nodes``,
    or for every node when ``nodes`` is None.
    """
    if features.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"feature dim {features.shape[1]} != input dim {params.weights[0].shape[0]}")
    h = features
    for k, w in enumerate(params.weights):
        z = spmm(prop, h) @ w
        h = relu(z) if k < params.num_layers - 1 else z
    logits = h if nodes is None else h[np.asarray(nodes, dtype=np.int64)]
    return logits if return_logits else softmax_rows(logits)


def forward_cve(plan: MinibatchPlan, features: np.ndarray, params: ModelParams,
                cache: HistoricalCache, *, dropout_rate: float = 0.0,
                rng: np.random.Generator | None = None, training: bool = False,
                masks: list | None = None,
                first_layer_aggregate: np.ndarray | None = None) -> ForwardTrace:
    """Control-variate forward pass over the plan's receptive fields.

    ``first_layer_aggregate`` may hold the precomputed product of the full
    propagation matrix with the features (valid because cache layer 0 is
    the feature matrix, so its deviation term is identically zero).
    Passing ``masks`` replays a previous trace's dropout decisions, which
    makes the loss a deterministic function of the parameters.
    """
    if plan.num_layers != params.num_layers:
        raise ValueError(
            f"plan has {plan.num_layers} layers, model has {params.num_layers}")
    cache.check_model(features, params)

    acts = [features[plan.fields[0]]]
    pres, inputs, used_masks = [], [], []
    for k in range(params.num_layers):
        rows_out = plan.fields[k + 1]
        cached = cache.layers[k]
        if k == 0:
            # Layer-0 deviation is exactly zero: cache layer 0 is the features.
            if first_layer_aggregate is not None:
                agg = first_layer_aggregate[rows_out]
            else:
                agg = spmm(plan.prop, cached, rows=rows_out)
        else:
            delta = acts[k] - cached[plan.fields[k]]
            agg = spmm(plan.sampled[k], delta) + spmm(plan.prop, cached, rows=rows_out)

        if masks is not None:
            mask = masks[k]
            masked = agg * mask if mask is not None else agg
        elif training and dropout_rate > 0.0:
            masked, mask = apply_dropout(agg, dropout_rate, rng, training=True)
        else:
            masked, mask = agg, None

        z = masked @ params.weights[k]
        acts.append(relu(z) if k < params.num_layers - 1 else softmax_rows(z))
        pres.append(z)
        inputs.append(masked)
        used_masks.append(mask)

    return ForwardTrace(plan, acts, pres, inputs, used_masks)


def _minibatch_rows(plan: MinibatchPlan, minibatch: np.ndarray) -> np.ndarray:
    nodes = plan.minibatch_nodes
    minibatch = np.asarray(minibatch, dtype=np.int64)
    rows = np.searchsorted(nodes, minibatch)
    if np.any(rows >= nodes.size) or np.any(nodes[np.minimum(rows, nodes.size - 1)] != minibatch):
        raise ValueError("minibatch node not covered by the plan")
    return rows


def minibatch_loss(trace: ForwardTrace, labels: np.ndarray, minibatch: np.ndarray) -> float:
    """Cross-entropy averaged over the minibatch draws (duplicates counted)."""
    rows = _minibatch_rows(trace.plan, minibatch)
    y = labels[np.asarray(minibatch, dtype=np.int64)]
    logits = trace.pres[-1]
    if np.any(y < 0) or np.any(y >= logits.shape[1]):
        raise ValueError("label out of range")
    logp = log_softmax_rows(logits[rows])
    return float(-logp[np.arange(rows.size), y].mean())


def backward(trace: ForwardTrace, labels: np.ndarray, minibatch: np.ndarray,
             params: ModelParams, weight_decay: float = 0.0) -> Gradient:
    """Exact reverse-mode gradient of the minibatch loss in the weights.

    Cached activations are constants: the error signal propagates down
    through the sampled aggregation of the deviation path only. Dropout
    masks recorded in the trace are replayed. ``weight_decay`` adds a
    lambda*W term per layer.
    """
    num_layers = params.num_layers
    if len(trace.pres) != num_layers:
        raise ValueError("trace and params disagree on layer count")
    rows = _minibatch_rows(trace.plan, minibatch)
    y = labels[np.asarray(minibatch, dtype=np.int64)]

    d_z = np.zeros_like(trace.pres[-1])
    contrib = trace.acts[-1][rows].copy()
    contrib[np.arange(rows.size), y] -= 1.0
    contrib /= rows.size
    np.add.at(d_z, rows, contrib)

    grads: Gradient = [None] * num_layers
    for k in range(num_layers - 1, -1, -1):
        grads[k] = trace.inputs[k].T @ d_z
        if weight_decay:
            grads[k] += weight_decay * params.weights[k]
        if k == 0:
            break
        d_agg = d_z @ params.weights[k].T
        if trace.masks[k] is not None:
            d_agg *= trace.masks[k]
        d_h = spmm_t(trace.plan.sampled[k], d_agg)
        d_z = d_h * (trace.pres[k - 1] > 0)
    return grads


def init_cache(prop: SparsePropagation, features: np.ndarray, params: ModelParams,
               apply_activation: bool = True) -> HistoricalCache:
    """Prime the cache with one truncated full-propagation pass.

    By default each stored layer is activated, matching what the training
    forward writes back; ``apply_activation=False`` keeps the raw chained
    products for fidelity experiments.
    """
    hbar = features
    hidden = []
    for k in range(params.num_layers - 1):
        z = spmm(prop, hbar) @ params.weights[k]
        hbar = relu(z) if apply_activation else z
        hidden.append(hbar)
    return HistoricalCache(features, hidden)


def update_cache(cache: HistoricalCache, trace: ForwardTrace) -> None:
    """Overwrite cached rows touched by the trace with fresh activations.

    Layer 0 is the feature matrix and is left untouched.
    """
    for k in range(1, cache.num_layers):
        cache.layers[k][trace.plan.fields[k]] = trace.acts[k]


def full_gradient(prop: SparsePropagation, features: np.ndarray, params: ModelParams,
                  labels: np.ndarray, nodes: np.ndarray, weight_decay: float = 0.0):
    """Loss and exact full-batch gradient, each labeled node counted once.

    This is the deterministic reference the probes compare sampled
    gradients against.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty node set")
    num_layers = params.num_layers

    aggs, pres = [], []
    h = features
    for k, w in enumerate(params.weights):
        agg = spmm(prop, h)
        z = agg @ w
        aggs.append(agg)
        pres.append(z)
        h = relu(z) if k < num_layers - 1 else z

    y = labels[nodes]
    logp = log_softmax_rows(pres[-1][nodes])
    loss = float(-logp[np.arange(nodes.size), y].mean())

    d_z = np.zeros_like(pres[-1])
    d_z[nodes] = np.exp(logp)
    d_z[nodes, y] -= 1.0
    d_z /= nodes.size

    grads: Gradient = [None] * num_layers
    for k in range(num_layers - 1, -1, -1):
        grads[k] = aggs[k].T @ d_z
        if weight_decay:
            grads[k] += weight_decay * params.weights[k]
        if k == 0:
            break
        # The propagation matrix is symmetric, so its transpose product is itself.
        d_h = spmm(prop, d_z @ params.weights[k].T)
        d_z = d_h * (pres[k - 1] > 0)
    return loss, grads


CHECKPOINT_MAGIC = b"GNNW"


def save_params(path, params: ModelParams) -> None:
    """Binary checkpoint: magic, u32 layer count, u32 dims, f64 weights."""
    dims = params.dims
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", params.num_layers))
        handle.write(struct.pack(f"<{len(dims)}I", *dims))
        for w in params.weights:
            np.ascontiguousarray(w, dtype="<f8").tofile(handle)


def load_params(path) -> ModelParams:
    path = Path(path)
    with open(path, "rb") as handle:
        if handle.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (num_layers,) = struct.unpack("<I", handle.read(4))
        dims = struct.unpack(f"<{num_layers + 1}I", handle.read(4 * (num_layers + 1)))
        weights = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            block = np.fromfile(handle, dtype="<f8", count=d_in * d_out)
            if block.size != d_in * d_out:
                raise ValueError(f"{path}: truncated checkpoint")
            weights.append(block.astype(np.float64).reshape(d_in, d_out))
    return ModelParams(weights)

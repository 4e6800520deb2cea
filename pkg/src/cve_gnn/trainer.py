"""End-to-end training loop: plans, cheap forward/backward, optimizer steps,
cache refreshes, periodic exact evaluation, metrics.

Evaluation always runs the exact full-propagation forward with dropout off,
so reported accuracy measures the parameters rather than cache staleness.
"""

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from cve_gnn.graph_core import Dataset, build_normalized_propagation, spmm
from cve_gnn.model import (
    ModelParams,
    backward,
    forward_cve,
    forward_exact,
    full_gradient,
    glorot_params,
    init_cache,
    minibatch_loss,
    update_cache,
)
from cve_gnn.optim import OptimizerConfig, init_state, step
from cve_gnn.sampling import (
    WITHOUT_REPLACEMENT,
    SamplerConfig,
    build_plan,
    sample_minibatch,
)

OUTPUT_POLICIES = ("last", "uniform-random")


class TrainingDivergedError(RuntimeError):
    """The minibatch loss became non-finite."""


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    optimizer: OptimizerConfig
    neighbors_per_layer: int = 2
    hidden_dim: int = 32
    num_layers: int = 2
    dropout: float = 0.0
    seed: int = 0
    eval_every: int = 1
    output_policy: str = "last"
    sampling_mode: str = WITHOUT_REPLACEMENT
    nominal_scaling: bool = False
    cache_activation: bool = True
    total_iterations: int | None = None
    dtype: str = "float64"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ValueError("epochs must be >= 0, batch_size and hidden_dim >= 1")
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.output_policy not in OUTPUT_POLICIES:
            raise ValueError(f"output_policy must be one of {OUTPUT_POLICIES}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")


METRICS_HEADER = ("epoch", "iter", "train_acc", "val_acc", "test_acc",
                  "loss", "grad_sq_norm", "wall_s")


@dataclass
class MetricsRow:
    epoch: int
    iteration: int
    train_acc: float
    val_acc: float
    test_acc: float
    loss: float
    grad_sq_norm: float
    wall_s: float


@dataclass
class RunMetrics:
    """One row per evaluation plus the initial (epoch 0) evaluation.

    The epoch-0 row reports the exact full-batch loss and squared gradient
    norm at initialization; later rows report means of the per-iteration
    minibatch values since the previous evaluation.
    """

    rows: list = field(default_factory=list)
    iteration_losses: list = field(default_factory=list)

    @property
    def max_test_acc(self) -> float:
        return max(row.test_acc for row in self.rows)

    def test_curve(self) -> list:
        return [(row.epoch, row.test_acc) for row in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(METRICS_HEADER)
            for row in self.rows:
                writer.writerow([
                    row.epoch, row.iteration,
                    *(f"{value:.9g}" for value in (
                        row.train_acc, row.val_acc, row.test_acc,
                        row.loss, row.grad_sq_norm, row.wall_s)),
                ])


def evaluate(prop, features, params: ModelParams, nodes, labels) -> float:
    """Accuracy of the exact forward on the node set, argmax ties going to
    the lowest class index."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty node set")
    probs = forward_exact(prop, features, params, nodes=nodes)
    return float((probs.argmax(axis=1) == labels[nodes]).mean())


def _split_accuracies(prop, features, params, split):
    probs = forward_exact(prop, features, params)
    pred = probs.argmax(axis=1)
    return tuple(
        float((pred[part] == split.labels[part]).mean())
        for part in (split.train, split.val, split.test)
    )


def grad_squared_norm(grads) -> float:
    return float(sum(np.square(g).sum() for g in grads))


def train(dataset: Dataset, config: TrainConfig, *, iteration_callback=None):
    """Run the full training procedure; returns (params, metrics).

    The returned iterate follows ``config.output_policy``: the final
    parameters, or the parameters entering a uniformly random iteration.
    ``iteration_callback(t, params, cache)``, if given, fires at the start
    of each iteration and must not touch the training RNG.
    """
    graph, features, split = dataset
    if split.train.size == 0:
        raise ValueError("empty train set")
    if config.batch_size > split.train.size:
        raise ValueError(
            f"batch_size {config.batch_size} exceeds train set size {split.train.size}")

    dtype = np.float64 if config.dtype == "float64" else np.float32
    x = np.ascontiguousarray(features, dtype=dtype)
    prop = build_normalized_propagation(graph).astype(dtype)

    rng = np.random.default_rng(config.seed)
    dims = [x.shape[1]] + [config.hidden_dim] * (config.num_layers - 1) + [split.num_classes]
    params = glorot_params(dims, rng, dtype=dtype)
    opt_state = init_state(params, config.optimizer)
    cache = init_cache(prop, x, params, apply_activation=config.cache_activation)
    first_agg = spmm(prop, x)

    sampler_cfg = SamplerConfig(
        neighbors_per_layer=config.neighbors_per_layer,
        batch_size=config.batch_size,
        mode=config.sampling_mode,
        seed=config.seed,
        nominal_scaling=config.nominal_scaling,
    )
    iters_per_epoch = math.ceil(split.train.size / config.batch_size)
    total = config.total_iterations
    if total is None:
        total = config.epochs * iters_per_epoch
    tau = None
    if config.output_policy == "uniform-random" and total > 0:
        tau = int(rng.integers(1, total + 1))

    metrics = RunMetrics()
    start = time.perf_counter()

    init_loss, init_grads = full_gradient(
        prop, x, params, split.labels, split.train,
        weight_decay=config.optimizer.weight_decay)
    accs = _split_accuracies(prop, x, params, split)
    metrics.rows.append(MetricsRow(0, 0, *accs, init_loss,
                                   grad_squared_norm(init_grads), 0.0))

    snapshot = None
    t = 0
    loss_sum = 0.0
    gsq_sum = 0.0
    span = 0
    done = False
    epoch = 0
    # An explicit iteration budget overrides the epoch count.
    max_epochs = math.inf if config.total_iterations is not None else config.epochs
    while not done and epoch < max_epochs:
        epoch += 1
        for _ in range(iters_per_epoch):
            if t >= total:
                done = True
                break
            t += 1
            if tau == t:
                snapshot = params.copy()
            if iteration_callback is not None:
                iteration_callback(t, params, cache)

            batch = sample_minibatch(split.train, config.batch_size, rng)
            plan = build_plan(graph, prop, batch, config.num_layers, sampler_cfg, rng)
            trace = forward_cve(plan, x, params, cache,
                                dropout_rate=config.dropout, rng=rng, training=True,
                                first_layer_aggregate=first_agg)
            loss = minibatch_loss(trace, split.labels, batch)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at iteration {t}")
            grads = backward(trace, split.labels, batch, params,
                             weight_decay=config.optimizer.weight_decay)
            step(opt_state, params, grads, config.optimizer)
            update_cache(cache, trace)

            loss_sum += loss
            gsq_sum += grad_squared_norm(grads)
            span += 1
            metrics.iteration_losses.append(loss)
        if t >= total:
            done = True

        if span and (epoch % config.eval_every == 0 or done or epoch == config.epochs):
            accs = _split_accuracies(prop, x, params, split)
            metrics.rows.append(MetricsRow(
                epoch, t, *accs, loss_sum / span, gsq_sum / span,
                time.perf_counter() - start))
            loss_sum = gsq_sum = 0.0
            span = 0

    if config.output_policy == "uniform-random" and snapshot is not None:
        return snapshot, metrics
    return params, metrics

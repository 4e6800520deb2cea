"""Independent oracles and empirical probes of the training dynamics.

The finite-difference oracle checks the hand-written backward pass. The
bias probe measures how far the mean sampled gradient sits from the exact
full-batch gradient at a fixed (parameters, cache) snapshot; the bound on
that gap scales with the stepsize, so probing trajectory-matched snapshots
at two stepsizes exposes the direction of the effect. The rate probe runs
fresh trainings with stepsize eta/sqrt(T) and tracks the mean exact
squared gradient norm over the iterates, which should shrink as T grows.

All probes run in float64 and define the exact reference gradient as the
full-batch, full-propagation gradient with dropout off and no weight decay.
"""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from cve_gnn.graph_core import Dataset, build_normalized_propagation
from cve_gnn.model import (
    Gradient,
    HistoricalCache,
    ModelParams,
    backward,
    forward_cve,
    full_gradient,
    minibatch_loss,
)
from cve_gnn.optim import OptimizerConfig
from cve_gnn.sampling import SamplerConfig, build_plan, sample_minibatch
from cve_gnn.trainer import TrainConfig, grad_squared_norm, train


@dataclass
class BiasEstimate:
    """Estimated max-abs deviation of the mean sampled gradient from the
    exact gradient, with the standard error at the extremal coordinate."""

    alpha: float
    samples: int
    estimate: float
    stderr: float


@dataclass
class RateTrace:
    """Mean exact squared gradient norm over the run, per iteration budget."""

    optimizer: str
    eta: float
    entries: list  # (T, statistic) with T strictly increasing


def finite_difference_gradient(loss_fn, params: ModelParams, step: float = 1e-5) -> Gradient:
    """Central-difference gradient of ``loss_fn(params)`` per coordinate.

    ``loss_fn`` must be deterministic (fixed plan, fixed dropout masks).
    Parameters are perturbed in place and restored.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    grads = [np.zeros_like(w) for w in params.weights]
    for k, w in enumerate(params.weights):
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + step
            f_plus = loss_fn(params)
            w[idx] = orig - step
            f_minus = loss_fn(params)
            w[idx] = orig
            grads[k][idx] = (f_plus - f_minus) / (2.0 * step)
    return grads


def bias_probe(dataset: Dataset, params: ModelParams, cache: HistoricalCache,
               sampler_config: SamplerConfig, samples: int, rng: np.random.Generator,
               *, alpha: float = float("nan"), prop=None) -> BiasEstimate:
    """Monte-Carlo estimate of the sampled-gradient bias at a fixed snapshot.

    Holds the parameters and cache fixed, draws ``samples`` independent
    (minibatch, plan) pairs, and compares the mean gradient to the exact
    full-batch gradient. Dropout and weight decay are off: both would be
    identical in the two quantities being compared.
    """
    if samples < 2:
        raise ValueError("need at least 2 samples")
    graph, features, split = dataset
    if prop is None:
        prop = build_normalized_propagation(graph)
    _, exact = full_gradient(prop, features, params, split.labels, split.train)

    mean = [np.zeros_like(w) for w in params.weights]
    m2 = [np.zeros_like(w) for w in params.weights]
    for i in range(1, samples + 1):
        batch = sample_minibatch(split.train, sampler_config.batch_size, rng)
        plan = build_plan(graph, prop, batch, params.num_layers, sampler_config, rng)
        trace = forward_cve(plan, features, params, cache)
        grads = backward(trace, split.labels, batch, params)
        for k, g in enumerate(grads):
            delta = g - mean[k]
            mean[k] += delta / i
            m2[k] += delta * (g - mean[k])

    estimate = 0.0
    stderr = 0.0
    for k in range(len(mean)):
        gap = np.abs(mean[k] - exact[k])
        j = np.unravel_index(np.argmax(gap), gap.shape)
        if gap[j] >= estimate:
            estimate = float(gap[j])
            stderr = float(np.sqrt(m2[k][j] / (samples * (samples - 1))))
    return BiasEstimate(alpha=alpha, samples=samples, estimate=estimate, stderr=stderr)


def snapshot_after_training(dataset: Dataset, config: TrainConfig):
    """Train for the configured budget and return (params, cache) plus the
    propagation matrix, for probing."""
    carrier = {}

    def keep(t, params, cache):
        carrier["cache"] = cache

    params, _ = train(dataset, config, iteration_callback=keep)
    prop = build_normalized_propagation(dataset.graph)
    return params, carrier["cache"], prop


def paired_bias_estimates(dataset: Dataset, base_config: TrainConfig,
                          sampler_config: SamplerConfig, samples: int,
                          probe_seed: int, lr_factor: float = 0.25):
    """Bias estimates at trajectory-matched snapshots for lr and lr*factor.

    Both arms train from the same seed for the same number of iterations
    and are probed with the same probe seed, so the Monte-Carlo noise is
    paired across arms.
    """
    results = []
    for factor in (1.0, lr_factor):
        opt = replace(base_config.optimizer, lr=base_config.optimizer.lr * factor)
        cfg = replace(base_config, optimizer=opt)
        params, cache, _ = snapshot_after_training(dataset, cfg)
        est = bias_probe(dataset, params, cache, sampler_config, samples,
                         np.random.default_rng(probe_seed), alpha=opt.lr)
        results.append(est)
    return tuple(results)


def rate_probe(dataset: Dataset, optimizer_kind: str, eta: float, t_grid,
               base_config: TrainConfig, *, thin: int | None = None) -> RateTrace:
    """Run fresh trainings with lr = eta/sqrt(T) for each T in the grid.

    The statistic per T is the mean over a thinned subsample of iterates of
    the exact squared gradient norm (dropout off in the reference; the
    training itself uses the configured dropout).
    """
    t_grid = sorted(int(t) for t in t_grid)
    if any(b <= a for a, b in zip(t_grid, t_grid[1:])):
        raise ValueError("iteration grid must be strictly increasing")
    graph, features, split = dataset
    prop = build_normalized_propagation(graph)

    entries = []
    for t_total in t_grid:
        stride = thin if thin is not None else max(1, t_total // 50)
        opt = replace(base_config.optimizer, kind=optimizer_kind, lr=eta / math.sqrt(t_total))
        cfg = replace(base_config, optimizer=opt, total_iterations=t_total)
        norms = []

        def record(t, params, cache):
            if (t - 1) % stride == 0:
                _, grads = full_gradient(prop, features, params, split.labels, split.train)
                norms.append(grad_squared_norm(grads))

        train(dataset, cfg, iteration_callback=record)
        entries.append((t_total, float(np.mean(norms))))
    return RateTrace(optimizer=optimizer_kind, eta=eta, entries=entries)


def write_probe_csv(path, rows) -> None:
    """Probe report rows: (probe, param, estimate, stderr, samples)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(("probe", "param", "estimate", "stderr", "samples"))
        for probe, param, estimate, stderr, samples in rows:
            writer.writerow((probe, f"{param:.9g}", f"{estimate:.9g}",
                             f"{stderr:.9g}", samples))

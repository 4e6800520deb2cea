"""Command-line entry points: training, evaluation, probes, synthetic data,
and reproduction runs driven by shipped config files.

Config files are flat ``key = value`` text mirroring the CLI flags; flags
override file values. Reproduction configs for the benchmark datasets ship
with the package (``cve-gnn repro <dataset> <optimizer>``).
"""

import argparse
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from cve_gnn.diagnostics import (
    bias_probe,
    finite_difference_gradient,
    paired_bias_estimates,
    rate_probe,
    snapshot_after_training,
    write_probe_csv,
)
from cve_gnn.graph_core import (
    Dataset,
    DatasetError,
    build_normalized_propagation,
    load_dataset,
    random_graph,
    write_dataset,
)
from cve_gnn.model import (
    backward,
    forward_cve,
    glorot_params,
    init_cache,
    load_params,
    minibatch_loss,
    save_params,
)
from cve_gnn.optim import OPTIMIZER_KINDS, OptimizerConfig
from cve_gnn.sampling import SAMPLING_MODES, SamplerConfig, build_plan
from cve_gnn.trainer import OUTPUT_POLICIES, TrainConfig, evaluate, train


@dataclass
class ExperimentSpec:
    """A resolved experiment: where the data lives, how to train, how often."""

    dataset_dir: Path
    config: TrainConfig
    runs: int = 1
    metrics_out: Path | None = None
    checkpoint_out: Path | None = None

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` comments and blanks allowed."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def format_config(values: dict) -> str:
    return "".join(f"{key} = {value}\n" for key, value in values.items())


_BOOL = {"true": True, "false": False, "1": True, "0": False}


def _to_bool(value: str) -> bool:
    try:
        return _BOOL[value.strip().lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {value!r}") from None


def _check_flag_combinations(values: dict, error):
    kind = values.get("optimizer", "heavy-ball")
    if kind == "sgd" and float(values.get("beta1", 0)) != 0.0:
        error("--beta1 cannot be nonzero with --optimizer sgd (momentum is fixed at 0)")
    if kind in ("sgd", "heavy-ball") and "beta2" in values:
        error(f"--beta2 does not apply to --optimizer {kind}")
    if values.get("adam-bias-correction") and kind != "adam":
        error(f"--adam-bias-correction does not apply to --optimizer {kind}")


def build_train_config(values: dict, error=None) -> TrainConfig:
    """Assemble a TrainConfig from merged string key/values.

    ``values`` contains only explicitly-set keys; defaults are applied
    here. ``error`` reports invalid flag combinations (defaults to raising
    ValueError).
    """
    if error is None:
        def error(message):
            raise ValueError(message)
    _check_flag_combinations(values, error)

    kind = values.get("optimizer", "heavy-ball")
    optimizer = OptimizerConfig(
        kind=kind,
        lr=float(values.get("lr", 0.01)),
        beta1=float(values.get("beta1", 0.0 if kind == "sgd" else 0.9)),
        beta2=float(values.get("beta2", 0.999)),
        eps=float(values.get("eps", 1e-8)),
        weight_decay=float(values.get("weight-decay", 0.0)),
        adam_bias_correction=_to_bool(values.get("adam-bias-correction", "false"))
        if isinstance(values.get("adam-bias-correction", "false"), str)
        else bool(values.get("adam-bias-correction")),
    )
    return TrainConfig(
        epochs=int(values.get("epochs", 100)),
        batch_size=int(values.get("batch-size", 20)),
        optimizer=optimizer,
        neighbors_per_layer=int(values.get("neighbors", 2)),
        hidden_dim=int(values.get("hidden-dim", 32)),
        num_layers=int(values.get("layers", 2)),
        dropout=float(values.get("dropout", 0.0)),
        seed=int(values.get("seed", 0)),
        eval_every=int(values.get("eval-every", 1)),
        output_policy=values.get("output-iterate", "last"),
        sampling_mode=values.get("sampling-mode", "without-replacement"),
        nominal_scaling=_to_bool(str(values.get("nominal-scaling", "false"))),
        dtype=values.get("dtype", "float64"),
    )


_TRAIN_KEYS = (
    "optimizer", "lr", "beta1", "beta2", "eps", "weight-decay",
    "adam-bias-correction", "dropout", "hidden-dim", "layers", "neighbors",
    "batch-size", "epochs", "seed", "eval-every", "sampling-mode",
    "output-iterate", "nominal-scaling", "dtype",
)


def _add_train_flags(parser):
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    parser.add_argument("--optimizer", choices=OPTIMIZER_KINDS)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--beta1", type=float)
    parser.add_argument("--beta2", type=float)
    parser.add_argument("--eps", type=float)
    parser.add_argument("--weight-decay", type=float)
    parser.add_argument("--adam-bias-correction", action="store_true", default=None)
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--hidden-dim", type=int)
    parser.add_argument("--layers", type=int, help="GCN depth (default 2)")
    parser.add_argument("--neighbors", type=int, help="sampled neighbors per layer")
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--eval-every", type=int)
    parser.add_argument("--sampling-mode", choices=SAMPLING_MODES)
    parser.add_argument("--output-iterate", choices=OUTPUT_POLICIES)
    parser.add_argument("--nominal-scaling", action="store_true", default=None)
    parser.add_argument("--dtype", choices=("float64", "float32"))


def _merge_values(args) -> dict:
    """Config-file values with explicit flags layered on top."""
    values = {}
    if getattr(args, "config", None):
        values.update(parse_config(Path(args.config).read_text()))
    for key in _TRAIN_KEYS:
        attr = key.replace("-", "_")
        flag = getattr(args, attr, None)
        if flag is not None:
            values[key] = str(flag) if not isinstance(flag, bool) else ("true" if flag else "false")
    return values


def gen_sbm(nodes: int, blocks: int, p_in: float, p_out: float, dim: int,
            seed: int, out_dir) -> Path:
    """Write a stochastic-block-model dataset directory.

    Blocks partition the nodes evenly (earlier blocks take the remainder);
    features are unit-variance Gaussians around block means spaced at
    distance 4; labels are block ids; 60/20/20 split by shuffled index.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ValueError("need 0 <= p_out <= p_in <= 1")
    if blocks < 1 or nodes < blocks:
        raise ValueError("need at least one node per block")
    if dim < 1:
        raise ValueError("feature dim must be >= 1")

    rng = np.random.default_rng(seed)
    sizes = np.full(blocks, nodes // blocks, dtype=np.int64)
    sizes[: nodes % blocks] += 1
    block_of = np.repeat(np.arange(blocks), sizes)

    edges = []
    for u in range(nodes - 1):
        tail = block_of[u + 1:]
        prob = np.where(tail == block_of[u], p_in, p_out)
        hits = np.nonzero(rng.random(nodes - u - 1) < prob)[0] + u + 1
        edges.extend((u, v) for v in hits)
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)

    means = np.zeros((blocks, dim))
    if blocks <= dim:
        # Axis placement: all pairwise mean distances are exactly 4.
        means[np.arange(blocks), np.arange(blocks)] = 2.0 * math.sqrt(2.0)
    else:
        means[:, 0] = 4.0 * np.arange(blocks)
    features = means[block_of] + rng.standard_normal((nodes, dim))

    perm = rng.permutation(nodes)
    n_train = int(0.6 * nodes)
    n_val = int(0.2 * nodes)
    return write_dataset(out_dir, nodes, edges, features, block_of,
                         perm[:n_train], perm[n_train:n_train + n_val],
                         perm[n_train + n_val:])


def _run_training(spec: ExperimentSpec):
    """Run the configured repetitions; returns (metrics list, last params)."""
    dataset = load_dataset(spec.dataset_dir)
    all_metrics = []
    params = None
    for run in range(spec.runs):
        cfg = spec.config if spec.runs == 1 else _reseed(spec.config, spec.config.seed + run)
        params, metrics = train(dataset, cfg)
        all_metrics.append(metrics)
        if spec.metrics_out:
            path = spec.metrics_out
            if spec.runs > 1:
                path = path.with_name(f"{path.stem}-run{run}{path.suffix}")
            metrics.to_csv(path)
    if spec.checkpoint_out and params is not None:
        save_params(spec.checkpoint_out, params)
    return all_metrics, params


def _reseed(config: TrainConfig, seed: int) -> TrainConfig:
    from dataclasses import replace
    return replace(config, seed=seed)


def _summarize_runs(all_metrics):
    """Both readings of the headline number: mean of per-run maxima, and
    the max over epochs of the mean test curve."""
    per_run_max = [m.max_test_acc for m in all_metrics]
    mean_of_maxima = float(np.mean(per_run_max))
    curves = [np.array([row.test_acc for row in m.rows]) for m in all_metrics]
    min_len = min(len(c) for c in curves)
    mean_curve = np.mean([c[:min_len] for c in curves], axis=0)
    max_of_mean_curve = float(mean_curve.max())
    return per_run_max, mean_of_maxima, max_of_mean_curve


def _cmd_train(args, parser) -> int:
    values = _merge_values(args)
    config = build_train_config(values, error=parser.error)
    spec = ExperimentSpec(
        dataset_dir=Path(args.dataset_dir),
        config=config,
        runs=args.runs,
        metrics_out=args.metrics_out,
        checkpoint_out=args.checkpoint_out,
    )
    all_metrics, _ = _run_training(spec)
    per_run_max, mean_max, max_mean = _summarize_runs(all_metrics)
    last = all_metrics[-1].rows[-1]
    print(f"final: train {last.train_acc:.4f}  val {last.val_acc:.4f}  "
          f"test {last.test_acc:.4f}  loss {last.loss:.6f}")
    for i, acc in enumerate(per_run_max):
        print(f"run {i}: max test accuracy {acc:.4f}")
    if len(per_run_max) > 1:
        print(f"mean of per-run max test accuracy: {mean_max:.4f}")
        print(f"max of mean test-accuracy curve:   {max_mean:.4f}")
    return 0


def _cmd_evaluate(args) -> int:
    graph, features, split = load_dataset(args.dataset_dir)
    params = load_params(args.checkpoint)
    prop = build_normalized_propagation(graph)
    nodes = getattr(split, args.split)
    acc = evaluate(prop, features, params, nodes, split.labels)
    print(f"{args.split} accuracy: {acc:.4f} ({nodes.size} nodes)")
    return 0


def _cmd_gen_sbm(args) -> int:
    out = gen_sbm(args.nodes, args.blocks, args.p_in, args.p_out, args.dim,
                  args.seed, args.out)
    print(f"wrote {out}")
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    graph = random_graph(args.nodes, 0.4, rng)
    prop = build_normalized_propagation(graph)
    features = rng.standard_normal((args.nodes, args.feature_dim))
    labels = rng.integers(0, args.classes, args.nodes)
    params = glorot_params([args.feature_dim, args.hidden_dim, args.classes], rng)
    cache = init_cache(prop, features, params)
    cache.layers[1] += 0.1 * rng.standard_normal(cache.layers[1].shape)  # stale cache

    batch = rng.choice(args.nodes, size=min(4, args.nodes), replace=True)
    sampler = SamplerConfig(neighbors_per_layer=2, batch_size=batch.size)
    plan = build_plan(graph, prop, batch, 2, sampler, rng)
    trace = forward_cve(plan, features, params, cache)
    analytic = backward(trace, labels, batch, params)

    def loss_fn(p):
        t = forward_cve(plan, features, p, cache)
        return minibatch_loss(t, labels, batch)

    numeric = finite_difference_gradient(loss_fn, params, args.step)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        rel = np.abs(a - n) / np.maximum(np.abs(n), 1e-8)
        worst = max(worst, float(rel.max()))
    print(f"max per-coordinate relative error: {worst:.3e}")
    if worst < 1e-5:
        print("gradcheck PASS")
        return 0
    print("gradcheck FAIL (threshold 1e-5)")
    return 1


def _cmd_probe_bias(args, parser) -> int:
    values = _merge_values(args)
    config = build_train_config(values, error=parser.error)
    from dataclasses import replace
    config = replace(config, total_iterations=args.snapshot_iterations, dropout=0.0)
    dataset = load_dataset(args.dataset_dir)
    sampler = SamplerConfig(
        neighbors_per_layer=config.neighbors_per_layer,
        batch_size=config.batch_size,
        mode=config.sampling_mode,
    )
    rows = []
    if args.compare_quarter_lr:
        full, quarter = paired_bias_estimates(
            dataset, config, sampler, args.samples, args.probe_seed)
        for est in (full, quarter):
            print(f"lr {est.alpha:g}: bias estimate {est.estimate:.6e} "
                  f"(stderr {est.stderr:.2e}, {est.samples} samples)")
            rows.append(("bias", est.alpha, est.estimate, est.stderr, est.samples))
        print("smaller at quarter lr:", quarter.estimate < full.estimate)
    else:
        params, cache, _ = snapshot_after_training(dataset, config)
        est = bias_probe(dataset, params, cache, sampler, args.samples,
                         np.random.default_rng(args.probe_seed),
                         alpha=config.optimizer.lr)
        print(f"lr {est.alpha:g}: bias estimate {est.estimate:.6e} "
              f"(stderr {est.stderr:.2e}, {est.samples} samples)")
        rows.append(("bias", est.alpha, est.estimate, est.stderr, est.samples))
    if args.out:
        write_probe_csv(args.out, rows)
    return 0


def _cmd_probe_rate(args, parser) -> int:
    values = _merge_values(args)
    config = build_train_config(values, error=parser.error)
    dataset = load_dataset(args.dataset_dir)
    grid = [int(part) for part in args.t_grid.split(",")]
    trace = rate_probe(dataset, args.optimizer or "heavy-ball", args.eta, grid, config)
    rows = []
    for t_total, stat in trace.entries:
        print(f"T={t_total}: mean squared gradient norm {stat:.6e}")
        rows.append(("rate", t_total, stat, 0.0, 1))
    if args.out:
        write_probe_csv(args.out, rows)
    return 0


def _cmd_repro(args, parser) -> int:
    name = f"{args.dataset}_{args.optimizer}.cfg"
    resource = resources.files("cve_gnn").joinpath("configs", name)
    if not resource.is_file():
        parser.error(f"no shipped config for {args.dataset} / {args.optimizer}")
    values = parse_config(resource.read_text())
    if _to_bool(values.get("large-scale", "false")):
        print(f"note: {args.dataset} is a large-scale config; expect a long run",
              file=sys.stderr)

    dataset_dir = Path(args.data_root) / values["dataset"]
    runs = args.runs if args.runs else int(values.get("runs", 3))
    config = build_train_config({k: v for k, v in values.items() if k in _TRAIN_KEYS},
                                error=parser.error)
    spec = ExperimentSpec(dataset_dir=dataset_dir, config=config, runs=runs,
                          metrics_out=args.metrics_out)
    all_metrics, _ = _run_training(spec)
    per_run_max, mean_max, max_mean = _summarize_runs(all_metrics)
    for i, acc in enumerate(per_run_max):
        print(f"run {i}: max test accuracy {acc:.4f}")
    print(f"mean of per-run max test accuracy: {mean_max:.4f}")
    print(f"max of mean test-accuracy curve:   {max_mean:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cve-gnn",
        description="Neighbor-sampled GCN training with control-variate gradients")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train on a dataset directory")
    p_train.add_argument("--dataset-dir", required=True, type=Path)
    _add_train_flags(p_train)
    p_train.add_argument("--runs", type=int, default=1)
    p_train.add_argument("--metrics-out", type=Path)
    p_train.add_argument("--checkpoint-out", type=Path)

    p_eval = sub.add_parser("evaluate", help="accuracy of a checkpoint on a split")
    p_eval.add_argument("--dataset-dir", required=True, type=Path)
    p_eval.add_argument("--checkpoint", required=True, type=Path)
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")

    p_bias = sub.add_parser("probe-bias", help="sampled-gradient bias at a snapshot")
    p_bias.add_argument("--dataset-dir", required=True, type=Path)
    _add_train_flags(p_bias)
    p_bias.add_argument("--snapshot-iterations", type=int, default=60)
    p_bias.add_argument("--samples", type=int, default=200)
    p_bias.add_argument("--probe-seed", type=int, default=0)
    p_bias.add_argument("--compare-quarter-lr", action="store_true")
    p_bias.add_argument("--out", type=Path)

    p_rate = sub.add_parser("probe-rate", help="gradient-norm trend in the budget")
    p_rate.add_argument("--dataset-dir", required=True, type=Path)
    _add_train_flags(p_rate)
    p_rate.add_argument("--eta", type=float, default=1.0)
    p_rate.add_argument("--t-grid", default="100,400")
    p_rate.add_argument("--out", type=Path)

    p_grad = sub.add_parser("gradcheck", help="backward vs central differences")
    p_grad.add_argument("--nodes", type=int, default=8)
    p_grad.add_argument("--feature-dim", type=int, default=5)
    p_grad.add_argument("--hidden-dim", type=int, default=4)
    p_grad.add_argument("--classes", type=int, default=3)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--step", type=float, default=1e-5)

    p_sbm = sub.add_parser("gen-sbm", help="write a stochastic-block-model dataset")
    p_sbm.add_argument("--nodes", type=int, required=True)
    p_sbm.add_argument("--blocks", type=int, default=2)
    p_sbm.add_argument("--p-in", type=float, required=True)
    p_sbm.add_argument("--p-out", type=float, required=True)
    p_sbm.add_argument("--dim", type=int, default=8)
    p_sbm.add_argument("--seed", type=int, default=0)
    p_sbm.add_argument("--out", type=Path, required=True)

    p_repro = sub.add_parser("repro", help="run a shipped reproduction config")
    p_repro.add_argument("dataset")
    p_repro.add_argument("optimizer", choices=OPTIMIZER_KINDS)
    p_repro.add_argument("--data-root", type=Path, default=Path("data"))
    p_repro.add_argument("--runs", type=int)
    p_repro.add_argument("--metrics-out", type=Path)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args, parser)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "probe-bias":
            return _cmd_probe_bias(args, parser)
        if args.command == "probe-rate":
            return _cmd_probe_rate(args, parser)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "gen-sbm":
            return _cmd_gen_sbm(args)
        if args.command == "repro":
            return _cmd_repro(args, parser)
    except (DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())

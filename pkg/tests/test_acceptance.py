"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s``. The dataset-backed
reproduction criteria (1-3) skip when the benchmark data is not present;
see tests/conftest.py and scripts/convert_planetoid.py.
"""

import csv
import time

import numpy as np
import pytest

from cve_gnn.diagnostics import finite_difference_gradient, paired_bias_estimates, rate_probe
from cve_gnn.graph_core import build_normalized_propagation, load_dataset, random_graph
from cve_gnn.model import (
    ModelParams,
    backward,
    forward_cve,
    forward_exact,
    glorot_params,
    init_cache,
    minibatch_loss,
)
from cve_gnn.optim import OptimizerConfig, init_state, step
from cve_gnn.sampling import SamplerConfig, build_plan, sample_neighbors
from cve_gnn.trainer import TrainConfig, train

from conftest import require_dataset
from cve_gnn.cli import build_train_config, parse_config
from importlib import resources


def report(criterion: int, passed: bool, detail: str) -> None:
    print(f"criterion {criterion:02d}: {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, f"criterion {criterion}: {detail}"


def _repro_mean_max(dataset_name: str, optimizer: str, runs: int = 3):
    path = require_dataset(dataset_name)
    dataset = load_dataset(path)
    cfg_text = resources.files("cve_gnn").joinpath(
        "configs", f"{dataset_name}_{optimizer}.cfg").read_text()
    config = build_train_config(parse_config(cfg_text))
    maxima = []
    for run in range(runs):
        from dataclasses import replace
        _, metrics = train(dataset, replace(config, seed=config.seed + run))
        maxima.append(metrics.max_test_acc)
    return float(np.mean(maxima)), maxima


class TestCriterion1CoraReproduction:
    def test_cora_heavy_ball_and_sgd(self):
        start = time.perf_counter()
        hb_mean, hb_all = _repro_mean_max("cora", "heavy-ball")
        sgd_mean, sgd_all = _repro_mean_max("cora", "sgd")
        elapsed = time.perf_counter() - start
        ok = hb_mean >= 0.785 and sgd_mean >= 0.780 and elapsed <= 600
        report(1, ok, f"cora heavy-ball {hb_mean:.4f} (threshold 0.785), "
                      f"sgd {sgd_mean:.4f} (threshold 0.780), {elapsed:.0f}s")


class TestCriterion2CiteseerReproduction:
    def test_citeseer_heavy_ball(self):
        start = time.perf_counter()
        mean, _ = _repro_mean_max("citeseer", "heavy-ball")
        elapsed = time.perf_counter() - start
        ok = mean >= 0.680 and elapsed <= 600
        report(2, ok, f"citeseer heavy-ball {mean:.4f} (threshold 0.680), {elapsed:.0f}s")


class TestCriterion3CoraAdam:
    def test_cora_adam_either_variant(self):
        mean_plain, _ = _repro_mean_max("cora", "adam")
        detail = f"cora adam (no bias correction) {mean_plain:.4f}"
        if mean_plain >= 0.775:
            report(3, True, detail + " (threshold 0.775)")
            return
        # second chance: the bias-corrected variant
        path = require_dataset("cora")
        dataset = load_dataset(path)
        cfg_text = resources.files("cve_gnn").joinpath("configs", "cora_adam.cfg").read_text()
        values = parse_config(cfg_text)
        values["adam-bias-correction"] = "true"
        config = build_train_config(values)
        from dataclasses import replace
        maxima = []
        for run in range(3):
            _, metrics = train(dataset, replace(config, seed=config.seed + run))
            maxima.append(metrics.max_test_acc)
        mean_corr = float(np.mean(maxima))
        ok = mean_corr >= 0.775
        report(3, ok, detail + f", with correction {mean_corr:.4f} (threshold 0.775)")


class TestCriterion4GradientCorrectness:
    def test_backward_matches_central_differences(self):
        rng = np.random.default_rng(2024)
        graph = random_graph(8, 0.4, rng)
        prop = build_normalized_propagation(graph)
        features = rng.standard_normal((8, 5))
        labels = rng.integers(0, 3, 8)
        params = glorot_params([5, 4, 3], rng)
        cache = init_cache(prop, features, params)
        cache.layers[1] += 0.3 * rng.standard_normal(cache.layers[1].shape)

        batch = rng.choice(8, size=4, replace=True)
        plan = build_plan(graph, prop, batch,
                          2, SamplerConfig(neighbors_per_layer=2, batch_size=4), rng)
        trace = forward_cve(plan, features, params, cache)
        analytic = backward(trace, labels, batch, params)

        def loss_fn(p):
            return minibatch_loss(forward_cve(plan, features, p, cache), labels, batch)

        numeric = finite_difference_gradient(loss_fn, params, 1e-5)
        worst = max(
            float((np.abs(a - n) / np.maximum(np.abs(n), 1e-8)).max())
            for a, n in zip(analytic, numeric))
        report(4, worst < 1e-5, f"max per-coordinate relative error {worst:.2e} "
                                "(threshold 1e-5, h=1e-5)")


class TestCriterion5CveExactEquivalence:
    def test_full_sampling_equals_exact_on_random_instances(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(50):
            n = int(rng.integers(4, 25))
            graph = random_graph(n, 0.3, rng)
            prop = build_normalized_propagation(graph)
            features = rng.standard_normal((n, int(rng.integers(2, 6))))
            dims = [features.shape[1], int(rng.integers(2, 6)), int(rng.integers(2, 5))]
            params = glorot_params(dims, rng)
            cache = init_cache(prop, features, params)
            cache.layers[1][:] = rng.standard_normal(cache.layers[1].shape)

            batch = rng.choice(n, size=min(4, n), replace=True)
            cfg = SamplerConfig(neighbors_per_layer=int(graph.degrees.max()) + 1,
                                batch_size=batch.size)
            plan = build_plan(graph, prop, batch, 2, cfg, rng)
            trace = forward_cve(plan, features, params, cache)
            exact = forward_exact(prop, features, params, nodes=plan.fields[2])
            worst = max(worst, float(np.abs(trace.acts[-1] - exact).max()))
        report(5, worst <= 1e-12, f"max |cve - exact| {worst:.2e} over 50 instances "
                                  "(threshold 1e-12)")


class TestCriterion6SampledRowUnbiasedness:
    def test_mean_sampled_rows_match_propagation_rows(self):
        # Tolerance is the stated 3 standard errors per entry. Across the
        # ~200 entries checked here that leaves little multiplicity slack,
        # so the run is seeded; the margin is reported for transparency.
        rng = np.random.default_rng(1234)
        draws = 100_000
        budget = 2
        start = time.perf_counter()
        worst_sigma = 0.0
        for _ in range(20):
            n = int(rng.integers(8, 40))
            graph = random_graph(n, 0.25, rng)
            prop = build_normalized_propagation(graph)
            v = int(rng.integers(0, n))
            pool = np.sort(np.append(graph.neighbors(v), v))
            p_size = pool.size
            s_size = min(budget, p_size)
            scale = p_size / s_size

            counts = np.zeros(p_size)
            for _ in range(draws):
                drawn = sample_neighbors(graph, v, budget, rng)
                counts[np.searchsorted(pool, drawn)] += 1
            inclusion = counts / draws
            row_vals = prop.row_values(v, pool)
            mean_row = inclusion * scale * row_vals
            q = s_size / p_size
            se = scale * row_vals * np.sqrt(q * (1 - q) / draws)
            gap = np.abs(mean_row - row_vals)
            if s_size == p_size:
                assert gap.max() == 0.0  # pool exhausted: exact
                continue
            worst_sigma = max(worst_sigma, float((gap / se).max()))
        elapsed = time.perf_counter() - start
        ok = worst_sigma <= 3.0 and elapsed <= 120
        report(6, ok, f"worst entry deviation {worst_sigma:.2f} standard errors "
                      f"(threshold 3), {elapsed:.0f}s over 20 pairs x 1e5 draws")


class TestCriterion7AmsgradMonotonicity:
    def test_second_moment_never_decreases(self):
        rng = np.random.default_rng(99)
        params = ModelParams([rng.standard_normal((6, 4)), rng.standard_normal((4, 2))])
        config = OptimizerConfig("amsgrad", lr=0.01)
        state = init_state(params, config)
        violations = 0
        for _ in range(1000):
            previous = [v.copy() for v in state.v]
            grads = [rng.standard_normal(w.shape) * rng.uniform(0, 5)
                     for w in params.weights]
            step(state, params, grads, config)
            for new, old in zip(state.v, previous):
                if not np.all(new >= old):
                    violations += 1
        report(7, violations == 0,
               f"{violations} violations over 1000 random steps (exact, zero tolerance)")


class TestCriterion8BiasShrinksWithStepsize:
    def test_paired_estimates_over_ten_seeds(self, sbm_dataset):
        wins = 0
        for seed in range(10):
            config = TrainConfig(
                epochs=1, batch_size=20, neighbors_per_layer=2, hidden_dim=16,
                optimizer=OptimizerConfig("heavy-ball", lr=0.2), seed=seed,
                total_iterations=5, dropout=0.0)
            sampler = SamplerConfig(neighbors_per_layer=2, batch_size=120)
            full, quarter = paired_bias_estimates(
                sbm_dataset, config, sampler, samples=800, probe_seed=1000 + seed)
            wins += quarter.estimate < full.estimate
        report(8, wins >= 8, f"estimate(lr/4) < estimate(lr) in {wins}/10 paired seeds "
                             "(threshold 8)")


class TestCriterion9RateTrend:
    @pytest.mark.parametrize("kind,eta", [("heavy-ball", 1.0), ("amsgrad", 0.5),
                                          ("adagrad", 1.0)])
    def test_statistic_shrinks_with_budget(self, sbm_dataset, kind, eta):
        wins = 0
        for seed in range(10):
            config = TrainConfig(
                epochs=1, batch_size=20, neighbors_per_layer=2, hidden_dim=16,
                optimizer=OptimizerConfig(kind, lr=0.1), seed=seed, dropout=0.0)
            (_, stat_small), (_, stat_large) = rate_probe(
                sbm_dataset, kind, eta, [100, 400], config).entries
            wins += stat_large < stat_small
        report(9, wins >= 8, f"{kind}: statistic(4T0) < statistic(T0) in {wins}/10 seeds "
                             "(threshold 8)")


class TestCriterion10Determinism:
    def test_identical_seeds_give_bitwise_identical_metrics(self, sbm_dataset, tmp_path):
        config = TrainConfig(
            epochs=8, batch_size=20, neighbors_per_layer=2, hidden_dim=16,
            optimizer=OptimizerConfig("heavy-ball", lr=0.05), seed=42, dropout=0.5)
        paths = []
        for name in ("a", "b"):
            _, metrics = train(sbm_dataset, config)
            path = tmp_path / f"{name}.csv"
            metrics.to_csv(path)
            paths.append(path)
        # wall_s is physical time and cannot be replayed; every computed
        # column must match bitwise.
        rows_a = [row[:-1] for row in csv.reader(open(paths[0]))]
        rows_b = [row[:-1] for row in csv.reader(open(paths[1]))]
        ok = rows_a == rows_b and len(rows_a) == 1 + 8 + 1  # header + epochs + initial
        report(10, ok, f"{len(rows_a) - 1} data rows, all columns except wall_s "
                       "bitwise identical")

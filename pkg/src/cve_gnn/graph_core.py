"""Graphs, the normalized propagation matrix, and sparse primitives.

The on-disk dataset layout read by :func:`load_dataset`:

* ``edges.tsv``    two tab-separated 0-based integer node ids per line,
  ``#`` comments and blank lines allowed
* ``features.bin`` magic ``GNNF``, little-endian u32 row and column counts,
  then row-major little-endian float32 values (``features.csv`` with one
  comma-separated row per node is accepted as a fallback)
* ``labels.tsv``   node id and class id per line
* ``train.txt`` / ``val.txt`` / ``test.txt``  one node id per line

Node ids on disk are dense and 0-based; converters that remap arbitrary
ids persist their mapping next to the dataset (``node_ids.tsv``), which
the loader treats as opaque metadata.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from cve_gnn import _kernels


class DatasetError(Exception):
    """A dataset file is missing or malformed; carries file and line."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


@dataclass
class CSRMatrix:
    """Row-compressed sparse matrix over 64-bit (or 32-bit) reals."""

    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def row(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values of row v (views, do not mutate)."""
        lo, hi = self.indptr[v], self.indptr[v + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def row_values(self, v: int, cols: np.ndarray) -> np.ndarray:
        """Values at the given column ids, which must lie in row v's support."""
        idx, vals = self.row(v)
        pos = np.searchsorted(idx, cols)
        if np.any(pos >= idx.shape[0]) or np.any(idx[pos] != cols):
            raise ValueError(f"columns not in the support of row {v}")
        return vals[pos]

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=self.data.dtype)
        for v in range(self.shape[0]):
            idx, vals = self.row(v)
            out[v, idx] = vals
        return out

    def astype(self, dtype) -> "CSRMatrix":
        return CSRMatrix(self.shape, self.indptr, self.indices,
                         np.ascontiguousarray(self.data, dtype=dtype))


# The normalized propagation matrix is an ordinary CSR matrix; the alias
# marks contract boundaries in signatures.
SparsePropagation = CSRMatrix


@dataclass
class Graph:
    """Undirected graph in CSR form: no self-loops, no duplicate edges."""

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        self.degrees = np.diff(self.indptr)

    @property
    def num_edges(self) -> int:
        return int(self.indices.shape[0]) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @classmethod
    def from_edges(cls, num_nodes: int, edges: np.ndarray) -> "Graph":
        """Build from an (m, 2) array of endpoints.

        Self-loops are dropped (normalization reintroduces them once),
        edges are symmetrized and deduplicated.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            raise ValueError("edge endpoint out of range")
        edges = edges[edges[:, 0] != edges[:, 1]]
        both = np.concatenate([edges, edges[:, ::-1]]) if edges.size else edges
        keys = np.unique(both[:, 0] * num_nodes + both[:, 1]) if both.size else both.reshape(0)
        src = keys // num_nodes
        dst = keys % num_nodes
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(num_nodes, indptr, dst.astype(np.int64))


@dataclass
class LabeledSplit:
    """Per-node class labels (-1 for unlabeled) plus disjoint index splits."""

    labels: np.ndarray
    num_classes: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            part = getattr(self, name)
            if part.size and np.any(self.labels[part] < 0):
                raise ValueError(f"{name} split contains unlabeled nodes")
        joined = np.concatenate([self.train, self.val, self.test])
        if np.unique(joined).size != joined.size:
            raise ValueError("train/val/test splits are not pairwise disjoint")


class Dataset(NamedTuple):
    graph: Graph
    features: np.ndarray
    split: LabeledSplit


FEATURES_MAGIC = b"GNNF"


def _read_int_columns(path: Path, n_cols: int):
    """Parse whitespace-separated integer columns with file/line diagnostics."""
    rows = []
    with open(path) as handle:
        for lineno, raw in enumerate(handle, start=1):
            text = raw.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != n_cols:
                raise DatasetError(path, f"expected {n_cols} columns, got {len(parts)}", lineno)
            try:
                values = [int(p) for p in parts]
            except ValueError:
                raise DatasetError(path, f"non-integer value in {parts!r}", lineno) from None
            rows.append((lineno, values))
    return rows


def _load_features(directory: Path) -> np.ndarray:
    bin_path = directory / "features.bin"
    csv_path = directory / "features.csv"
    if bin_path.exists():
        with open(bin_path, "rb") as handle:
            header = handle.read(12)
            if len(header) < 12 or header[:4] != FEATURES_MAGIC:
                raise DatasetError(bin_path, "bad magic or truncated header")
            rows, cols = struct.unpack("<II", header[4:12])
            payload = np.fromfile(handle, dtype="<f4")
        if payload.size != rows * cols:
            raise DatasetError(bin_path, f"expected {rows * cols} values, found {payload.size}")
        features = payload.astype(np.float64).reshape(rows, cols)
    elif csv_path.exists():
        try:
            features = np.loadtxt(csv_path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DatasetError(csv_path, f"could not parse: {exc}") from None
    else:
        raise DatasetError(bin_path, "missing features.bin (and no features.csv fallback)")
    if not np.all(np.isfinite(features)):
        raise DatasetError(bin_path if bin_path.exists() else csv_path, "non-finite feature value")
    return features


def load_dataset(directory) -> Dataset:
    """Load and validate a dataset directory.

    Returns the graph (symmetrized, deduplicated, self-loops dropped), the
    node feature matrix as float64, and the labeled split.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(directory, "not a directory")

    features = _load_features(directory)
    num_nodes = features.shape[0]

    edges_path = directory / "edges.tsv"
    if not edges_path.exists():
        raise DatasetError(edges_path, "missing file")
    edge_rows = _read_int_columns(edges_path, 2)
    edges = np.array([values for _, values in edge_rows], dtype=np.int64).reshape(-1, 2)
    for lineno, (u, v) in zip((ln for ln, _ in edge_rows), edges):
        if u < 0 or v < 0 or u >= num_nodes or v >= num_nodes:
            raise DatasetError(edges_path, f"node id out of range: ({u}, {v})", lineno)
    graph = Graph.from_edges(num_nodes, edges)

    labels_path = directory / "labels.tsv"
    if not labels_path.exists():
        raise DatasetError(labels_path, "missing file")
    labels = np.full(num_nodes, -1, dtype=np.int64)
    for lineno, (node, cls) in _read_int_columns(labels_path, 2):
        if node < 0 or node >= num_nodes:
            raise DatasetError(labels_path, f"node id out of range: {node}", lineno)
        if cls < 0:
            raise DatasetError(labels_path, f"negative class id: {cls}", lineno)
        labels[node] = cls
    num_classes = int(labels.max()) + 1 if np.any(labels >= 0) else 0

    parts = {}
    for name in ("train", "val", "test"):
        part_path = directory / f"{name}.txt"
        if not part_path.exists():
            raise DatasetError(part_path, "missing file")
        ids = []
        for lineno, (node,) in _read_int_columns(part_path, 1):
            if node < 0 or node >= num_nodes:
                raise DatasetError(part_path, f"node id out of range: {node}", lineno)
            if labels[node] < 0:
                raise DatasetError(part_path, f"node {node} has no label", lineno)
            ids.append(node)
        parts[name] = np.array(ids, dtype=np.int64)

    split = LabeledSplit(labels, num_classes, parts["train"], parts["val"], parts["test"])
    return Dataset(graph, features, split)


def write_dataset(directory, num_nodes, edges, features, labels, train, val, test) -> Path:
    """Write a dataset directory in the canonical on-disk layout.

    ``edges`` holds each undirected edge once; features are stored as
    float32 per the file format.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "edges.tsv", "w") as handle:
        for u, v in np.asarray(edges, dtype=np.int64).reshape(-1, 2):
            handle.write(f"{u}\t{v}\n")
    features = np.ascontiguousarray(features, dtype="<f4")
    with open(directory / "features.bin", "wb") as handle:
        handle.write(FEATURES_MAGIC)
        handle.write(struct.pack("<II", features.shape[0], features.shape[1]))
        features.tofile(handle)
    with open(directory / "labels.tsv", "w") as handle:
        for node, cls in enumerate(np.asarray(labels, dtype=np.int64)):
            if cls >= 0:
                handle.write(f"{node}\t{cls}\n")
    for name, ids in (("train", train), ("val", val), ("test", test)):
        with open(directory / f"{name}.txt", "w") as handle:
            for node in np.asarray(ids, dtype=np.int64):
                handle.write(f"{node}\n")
    return directory


def build_normalized_propagation(graph: Graph) -> SparsePropagation:
    """Degree-normalized adjacency with self-loops.

    Entry (v, u) is 1/sqrt((deg(v)+1)(deg(u)+1)) for u adjacent to v or
    u == v, and 0 elsewhere. Every graph, including an edgeless one, is
    valid; isolated nodes get the single diagonal entry 1.
    """
    n = graph.num_nodes
    inv_sqrt = 1.0 / np.sqrt(graph.degrees + 1.0)

    row_ids = np.repeat(np.arange(n, dtype=np.int64), graph.degrees)
    # Splice the diagonal entry into each sorted row.
    before_self = np.zeros(n, dtype=np.int64)
    np.add.at(before_self, row_ids[graph.indices < row_ids], 1)
    insert_at = graph.indptr[:-1] + before_self

    indices = np.insert(graph.indices, insert_at, np.arange(n, dtype=np.int64))
    off_diag = inv_sqrt[row_ids] * inv_sqrt[graph.indices]
    data = np.insert(off_diag, insert_at, inv_sqrt * inv_sqrt)
    indptr = graph.indptr + np.arange(n + 1, dtype=np.int64)
    return CSRMatrix((n, n), indptr, indices, data)


def spmm(matrix: CSRMatrix, dense: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
    """Sparse-dense product, optionally restricted to a subset of output rows.

    With ``rows`` given, returns ``matrix[rows] @ dense`` with one output
    row per requested row.
    """
    if dense.ndim != 2 or matrix.shape[1] != dense.shape[0]:
        raise ValueError(
            f"dimension mismatch: {matrix.shape} @ {dense.shape}"
        )
    dense = np.ascontiguousarray(dense)
    if rows is None:
        out = np.zeros((matrix.shape[0], dense.shape[1]), dtype=dense.dtype)
        _kernels.spmm_into(matrix.indptr, matrix.indices, matrix.data, dense, out)
    else:
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        out = np.zeros((rows.shape[0], dense.shape[1]), dtype=dense.dtype)
        _kernels.spmm_rows_into(matrix.indptr, matrix.indices, matrix.data, rows, dense, out)
    return out


def spmm_t(matrix: CSRMatrix, dense: np.ndarray) -> np.ndarray:
    """Transpose product ``matrix.T @ dense``."""
    if dense.ndim != 2 or matrix.shape[0] != dense.shape[0]:
        raise ValueError(f"dimension mismatch: {matrix.shape}.T @ {dense.shape}")
    dense = np.ascontiguousarray(dense)
    out = np.zeros((matrix.shape[1], dense.shape[1]), dtype=dense.dtype)
    _kernels.spmm_t_into(matrix.indptr, matrix.indices, matrix.data, dense, out)
    return out


def random_graph(num_nodes: int, edge_prob: float, rng: np.random.Generator) -> Graph:
    """Erdos-Renyi graph; test and probe plumbing."""
    edges = []
    for u in range(num_nodes):
        hits = np.nonzero(rng.random(num_nodes - u - 1) < edge_prob)[0]
        for v in hits + u + 1:
            edges.append((u, v))
    return Graph.from_edges(num_nodes, np.array(edges, dtype=np.int64).reshape(-1, 2))

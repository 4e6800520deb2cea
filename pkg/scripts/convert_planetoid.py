#!/usr/bin/env python3
"""Convert the classic citation-network distributions into the dataset
directory layout this package reads (edges.tsv / features.bin / labels.tsv /
train.txt / val.txt / test.txt).

Two source formats are supported:

1. Pickled split files ``ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}``
   (the format distributed with the original semi-supervised splits; needs
   scipy to unpickle the sparse feature blocks). This reproduces the
   standard 140/500/1000-style splits exactly.

       python3 scripts/convert_planetoid.py ind /path/to/raw cora data/cora

2. Plain-text ``<name>.content`` + ``<name>.cites`` files. These carry no
   split information, so a split in the standard style is synthesized:
   20 labeled nodes per class for training, then 500 validation and 1000
   test nodes, drawn with a fixed seed. Accuracy on such a split matches
   the standard split only statistically.

       python3 scripts/convert_planetoid.py content /path/to/raw cora data/cora

Arbitrary node ids are remapped to dense 0-based indices; the mapping is
persisted as ``node_ids.tsv`` (original_id <tab> dense_id) next to the
converted files.
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from cve_gnn.graph_core import write_dataset  # noqa: E402


def _write_id_map(out_dir, original_ids):
    with open(Path(out_dir) / "node_ids.tsv", "w") as handle:
        for dense, original in enumerate(original_ids):
            handle.write(f"{original}\t{dense}\n")


def convert_ind(raw_dir: Path, name: str, out_dir: Path) -> None:
    def load(part):
        with open(raw_dir / f"ind.{name}.{part}", "rb") as handle:
            return pickle.load(handle, encoding="latin1")

    x, y, tx, ty, allx, ally, graph = (load(p) for p in
                                       ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_idx = np.loadtxt(raw_dir / f"ind.{name}.test.index", dtype=np.int64)

    allx = np.asarray(allx.todense(), dtype=np.float64)
    tx = np.asarray(tx.todense(), dtype=np.float64)
    ally = np.asarray(ally)
    ty = np.asarray(ty)

    num_nodes = max(int(test_idx.max()) + 1, allx.shape[0] + tx.shape[0])
    dim = allx.shape[1]
    num_classes = ally.shape[1]

    features = np.zeros((num_nodes, dim))
    onehot = np.zeros((num_nodes, num_classes))
    features[: allx.shape[0]] = allx
    onehot[: ally.shape[0]] = ally
    # Test features/labels are stored in test.index order.
    order = np.sort(test_idx)
    features[order] = tx[np.argsort(test_idx)]
    onehot[order] = ty[np.argsort(test_idx)]
    labels = onehot.argmax(axis=1)
    labels[onehot.sum(axis=1) == 0] = -1  # isolated unlabeled ids in the test range

    edges = []
    for u, neighbors in graph.items():
        for v in neighbors:
            if u != v and u < num_nodes and v < num_nodes:
                edges.append((u, v))

    train = np.arange(x.shape[0], dtype=np.int64)
    val = np.arange(x.shape[0], x.shape[0] + 500, dtype=np.int64)
    test = np.sort(test_idx)
    test = test[labels[test] >= 0]

    write_dataset(out_dir, num_nodes, np.array(edges, dtype=np.int64),
                  features, labels, train, val, test)
    _write_id_map(out_dir, np.arange(num_nodes))
    print(f"wrote {out_dir}: {num_nodes} nodes, {len(edges)} directed edge records, "
          f"{num_classes} classes, splits {train.size}/{val.size}/{test.size}")


def convert_content(raw_dir: Path, name: str, out_dir: Path, seed: int = 0) -> None:
    ids, rows, label_names = [], [], []
    with open(raw_dir / f"{name}.content") as handle:
        for line in handle:
            parts = line.strip().split("\t")
            if not parts or parts == [""]:
                continue
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:-1]])
            label_names.append(parts[-1])

    id_of = {original: dense for dense, original in enumerate(ids)}
    classes = {c: i for i, c in enumerate(sorted(set(label_names)))}
    labels = np.array([classes[c] for c in label_names], dtype=np.int64)
    features = np.array(rows, dtype=np.float64)
    num_nodes = len(ids)

    edges = []
    skipped = 0
    with open(raw_dir / f"{name}.cites") as handle:
        for line in handle:
            parts = line.split()
            if len(parts) != 2:
                continue
            src, dst = parts
            if src in id_of and dst in id_of:
                edges.append((id_of[src], id_of[dst]))
            else:
                skipped += 1

    rng = np.random.default_rng(seed)
    train = []
    for c in range(len(classes)):
        members = np.nonzero(labels == c)[0]
        train.extend(rng.permutation(members)[:20])
    train = np.sort(np.array(train, dtype=np.int64))
    rest = rng.permutation(np.setdiff1d(np.arange(num_nodes), train))
    val = np.sort(rest[:500])
    test = np.sort(rest[500:1500])

    write_dataset(out_dir, num_nodes, np.array(edges, dtype=np.int64),
                  features, labels, train, val, test)
    _write_id_map(out_dir, ids)
    print(f"wrote {out_dir}: {num_nodes} nodes, {len(edges)} citation records "
          f"({skipped} skipped), {len(classes)} classes, "
          f"splits {train.size}/{val.size}/{test.size} (synthesized, seed {seed})")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("format", choices=("ind", "content"))
    parser.add_argument("raw_dir", type=Path)
    parser.add_argument("name", help="dataset stem, e.g. cora or citeseer")
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--seed", type=int, default=0,
                        help="split seed for the content format")
    args = parser.parse_args()
    if args.format == "ind":
        convert_ind(args.raw_dir, args.name, args.out_dir)
    else:
        convert_content(args.raw_dir, args.name, args.out_dir, args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())

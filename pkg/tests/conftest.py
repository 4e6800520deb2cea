import os
from pathlib import Path

import numpy as np
import pytest

from cve_gnn.cli import gen_sbm
from cve_gnn.graph_core import Dataset, load_dataset

# Canonical synthetic instance used across trainer/diagnostics/acceptance
# tests: near-separable two-block SBM.
SBM_ARGS = dict(nodes=200, blocks=2, p_in=0.2, p_out=0.01, dim=8, seed=1)


@pytest.fixture(scope="session")
def sbm_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("data") / "sbm"
    gen_sbm(out_dir=out, **SBM_ARGS)
    return out


@pytest.fixture(scope="session")
def sbm_dataset(sbm_dir) -> Dataset:
    return load_dataset(sbm_dir)


def dataset_root() -> Path:
    return Path(os.environ.get("CVE_GNN_DATA", Path(__file__).resolve().parent.parent / "data"))


def require_dataset(name: str) -> Path:
    """Benchmark datasets cannot be fetched in a sandboxed environment, so
    tests that need them skip with a pointer to the converter."""
    path = dataset_root() / name
    if not (path / "features.bin").exists() and not (path / "features.csv").exists():
        pytest.skip(
            f"dataset {name!r} not present under {path.parent} "
            "(convert the raw files with scripts/convert_planetoid.py, "
            "or point CVE_GNN_DATA at a directory containing it)")
    return path

"""Backend equivalence: the compiled extension and the numpy fallback
implement the same contracts."""

import numpy as np
import pytest

from cve_gnn import _kernels
from cve_gnn.graph_core import build_normalized_propagation, random_graph


def backends():
    if _kernels.compiled_backend is None:
        pytest.skip("compiled extension not built in this environment")
    return _kernels.compiled_backend, _kernels.python_backend


def random_csr(rng, rows=25, cols=18, dtype=np.float64):
    density = 0.2
    mask = rng.random((rows, cols)) < density
    indptr = np.zeros(rows + 1, dtype=np.int64)
    indices, data = [], []
    for r in range(rows):
        cols_r = np.nonzero(mask[r])[0]
        indices.extend(cols_r)
        data.extend(rng.standard_normal(cols_r.size))
        indptr[r + 1] = len(indices)
    return (indptr, np.array(indices, dtype=np.int64),
            np.array(data, dtype=dtype), (rows, cols))


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_backends_agree(dtype):
    compiled, fallback = backends()
    rng = np.random.default_rng(0)
    for trial in range(20):
        indptr, indices, data, (rows, cols) = random_csr(rng, dtype=dtype)
        width = int(rng.integers(1, 9))
        dense = rng.standard_normal((cols, width)).astype(dtype)
        out_a = np.zeros((rows, width), dtype=dtype)
        out_b = np.zeros((rows, width), dtype=dtype)
        compiled.spmm(indptr, indices, data, dense, out_a)
        fallback.spmm(indptr, indices, data, dense, out_b)
        tol = 1e-12 if dtype == np.float64 else 1e-5
        np.testing.assert_allclose(out_a, out_b, atol=tol)

        sel = rng.choice(rows, size=5, replace=False).astype(np.int64)
        sub_a = np.zeros((5, width), dtype=dtype)
        sub_b = np.zeros((5, width), dtype=dtype)
        compiled.spmm_rows(indptr, indices, data, sel, dense, sub_a)
        fallback.spmm_rows(indptr, indices, data, sel, dense, sub_b)
        np.testing.assert_allclose(sub_a, sub_b, atol=tol)

        tall = rng.standard_normal((rows, width)).astype(dtype)
        t_a = np.zeros((cols, width), dtype=dtype)
        t_b = np.zeros((cols, width), dtype=dtype)
        compiled.spmm_t(indptr, indices, data, tall, t_a)
        fallback.spmm_t(indptr, indices, data, tall, t_b)
        np.testing.assert_allclose(t_a, t_b, atol=tol)


def test_each_backend_is_bitwise_deterministic():
    compiled, fallback = backends()
    rng = np.random.default_rng(1)
    g = random_graph(60, 0.1, rng)
    p = build_normalized_propagation(g)
    dense = rng.standard_normal((60, 16))
    for backend in (compiled, fallback):
        out1 = np.zeros((60, 16))
        out2 = np.zeros((60, 16))
        backend.spmm(p.indptr, p.indices, p.data, dense, out1)
        backend.spmm(p.indptr, p.indices, p.data, dense, out2)
        assert np.array_equal(out1, out2)


def test_env_override_accepts_known_values(monkeypatch):
    # The selection machinery validates CVE_GNN_KERNELS at import; here we
    # only check the currently selected backend is one of the two modules.
    assert _kernels.BACKEND_NAME in ("compiled", "python")
    assert _kernels.active_backend in (_kernels.compiled_backend, _kernels.python_backend)

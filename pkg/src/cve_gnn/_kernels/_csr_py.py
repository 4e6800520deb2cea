"""Numpy fallback for the CSR kernels.

Same call signatures and accumulate-into-``out`` semantics as the compiled
extension; each output row is a single contiguous reduction, so results are
deterministic for a fixed BLAS thread count.
"""

import numpy as np


def spmm(indptr, indices, data, dense, out):
    for r in range(out.shape[0]):
        lo, hi = indptr[r], indptr[r + 1]
        if hi > lo:
            out[r] += data[lo:hi] @ dense[indices[lo:hi]]


def spmm_rows(indptr, indices, data, rows, dense, out):
    for i in range(rows.shape[0]):
        lo, hi = indptr[rows[i]], indptr[rows[i] + 1]
        if hi > lo:
            out[i] += data[lo:hi] @ dense[indices[lo:hi]]


def spmm_t(indptr, indices, data, dense, out):
    # Column indices within one row are unique, so fancy-index += is safe.
    for r in range(dense.shape[0]):
        lo, hi = indptr[r], indptr[r + 1]
        if hi > lo:
            out[indices[lo:hi]] += data[lo:hi, np.newaxis] * dense[r]

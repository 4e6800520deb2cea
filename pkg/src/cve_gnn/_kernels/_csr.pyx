# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CSR kernels for the sparse-dense products in the hot training loop.

All kernels accumulate into a caller-allocated ``out`` buffer and use a fixed
per-row reduction order, so results are bitwise reproducible.
"""

cimport numpy as cnp

ctypedef fused real:
    float
    double


def spmm(const cnp.int64_t[::1] indptr,
         const cnp.int64_t[::1] indices,
         const real[::1] data,
         const real[:, ::1] dense,
         real[:, ::1] out):
    """out += A @ dense for a CSR matrix A with the given structure."""
    cdef Py_ssize_t n_rows = out.shape[0]
    cdef Py_ssize_t width = dense.shape[1]
    cdef Py_ssize_t r, j, k, c
    cdef real a
    for r in range(n_rows):
        for j in range(indptr[r], indptr[r + 1]):
            c = indices[j]
            a = data[j]
            for k in range(width):
                out[r, k] += a * dense[c, k]


def spmm_rows(const cnp.int64_t[::1] indptr,
              const cnp.int64_t[::1] indices,
              const real[::1] data,
              const cnp.int64_t[::1] rows,
              const real[:, ::1] dense,
              real[:, ::1] out):
    """out[i] += A[rows[i]] @ dense, evaluating only the requested rows."""
    cdef Py_ssize_t n_rows = rows.shape[0]
    cdef Py_ssize_t width = dense.shape[1]
    cdef Py_ssize_t i, r, j, k, c
    cdef real a
    for i in range(n_rows):
        r = rows[i]
        for j in range(indptr[r], indptr[r + 1]):
            c = indices[j]
            a = data[j]
            for k in range(width):
                out[i, k] += a * dense[c, k]


def spmm_t(const cnp.int64_t[::1] indptr,
           const cnp.int64_t[::1] indices,
           const real[::1] data,
           const real[:, ::1] dense,
           real[:, ::1] out):
    """out += A.T @ dense (scatter form; rows of A visited in order)."""
    cdef Py_ssize_t n_rows = dense.shape[0]
    cdef Py_ssize_t width = dense.shape[1]
    cdef Py_ssize_t r, j, k, c
    cdef real a
    for r in range(n_rows):
        for j in range(indptr[r], indptr[r + 1]):
            c = indices[j]
            a = data[j]
            for k in range(width):
                out[c, k] += a * dense[r, k]

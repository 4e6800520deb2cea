"""Kernel backend selection.

The compiled extension is preferred when present; the numpy fallback is
selected otherwise. ``CVE_GNN_KERNELS=python`` forces the fallback and
``CVE_GNN_KERNELS=compiled`` makes a missing extension an import error.
"""

import os

from . import _csr_py as python_backend

_requested = os.environ.get("CVE_GNN_KERNELS", "auto").strip().lower()
if _requested not in ("auto", "compiled", "python"):
    raise RuntimeError(
        f"CVE_GNN_KERNELS must be 'auto', 'compiled' or 'python', got {_requested!r}"
    )

compiled_backend = None
if _requested != "python":
    try:
        from . import _csr as compiled_backend
    except ImportError:
        if _requested == "compiled":
            raise

active_backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if active_backend is compiled_backend else "python"

spmm_into = active_backend.spmm
spmm_rows_into = active_backend.spmm_rows
spmm_t_into = active_backend.spmm_t

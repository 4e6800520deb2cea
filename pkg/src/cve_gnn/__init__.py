"""Neighbor-sampled GCN training with control-variate gradients.

Set ``CVE_GNN_THREADS`` to cap internal parallelism (it is forwarded to the
BLAS thread-pool variables, so it must be set before numpy is imported;
importing this package before numpy is sufficient).
"""

import os

_threads = os.environ.get("CVE_GNN_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
del os, _threads

__version__ = "0.1.0"

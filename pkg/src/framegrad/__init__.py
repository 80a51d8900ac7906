"""framegrad: spatiotemporal attention video classification with
gradient-based per-frame importance scoring, plus the synthetic benchmark
and evaluation harness used to verify it."""

import os

# Tensor shapes here are small; threaded BLAS loses to its own overhead and
# single-threaded execution keeps runs bit-reproducible. Only effective when
# this package is imported before numpy, so the CLI and tests import it first.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from .tensor import Tensor  # noqa: E402

__version__ = "0.1.0"

__all__ = ["Tensor", "__version__"]

"""Transformer-based feature-reconstruction anomaly detection at desk scale."""

import os

# Desk-scale matrices are too small for BLAS threading to pay off (measured
# ~1.6x slower with 2 threads), and single-threaded reductions keep training
# bit-reproducible. Respects explicit overrides; takes effect only if set
# before numpy loads its BLAS.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

__version__ = "0.1.0"

"""Pins BLAS to one thread before numpy loads: faster at these matrix
sizes and keeps every training run bit-reproducible."""

import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

"""ODE-based recursive deformable registration for 4D volumetric sequences.

A compact registration stack: a small reverse-mode autodiff engine over
dense 3D tensors, a two-level feature pyramid with a convolutional GRU,
cost-volume guided velocity estimation, fixed-step Euler integration of
voxel velocities, unsupervised NCC + smoothness training, and a synthetic
phantom generator with analytic ground-truth motion for evaluation.

Hot kernels run through numba by default; set ODEREG_BACKEND=numpy for the
pure-numpy lane. ODEREG_THREADS caps BLAS/numba thread counts when set
before the first numpy import.
"""

import os as _os

_threads = _os.environ.get("ODEREG_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .backend import BACKEND
from .autodiff import Tensor, no_grad
from .errors import (ConfigError, DataFormatError, GradientError,
                     IntegrationError, OptimizerError, ShapeError)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Tensor",
    "no_grad",
    "ShapeError",
    "ConfigError",
    "DataFormatError",
    "GradientError",
    "IntegrationError",
    "OptimizerError",
    "__version__",
]

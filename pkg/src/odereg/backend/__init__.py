"""Kernel backend selection.

The hot inner loops (trilinear warping, cost volumes, box window sums,
conv im2col/col2im) exist in two lanes with identical signatures: a numba
@njit lane and a pure-numpy lane. ODEREG_BACKEND forces one ("numba" or
"numpy"); the default is numba when importable, numpy otherwise.
"""

import os

_choice = os.environ.get("ODEREG_BACKEND", "auto").strip().lower()

if _choice in ("", "auto"):
    try:
        from . import numba_kernels as _impl
    except ImportError:
        from . import numpy_kernels as _impl
elif _choice == "numpy":
    from . import numpy_kernels as _impl
elif _choice == "numba":
    from . import numba_kernels as _impl
else:
    raise RuntimeError(
        f"unknown ODEREG_BACKEND={_choice!r}; expected 'numba' or 'numpy'")

BACKEND = _impl.NAME

im2col3 = _impl.im2col3
col2im3 = _impl.col2im3
warp_trilinear = _impl.warp_trilinear
warp_bwd_feature = _impl.warp_bwd_feature
warp_bwd_field = _impl.warp_bwd_field
cost_volume_forward = _impl.cost_volume_forward
cost_volume_backward = _impl.cost_volume_backward
box_sum3 = _impl.box_sum3

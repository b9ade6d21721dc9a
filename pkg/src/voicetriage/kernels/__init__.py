"""Hot numeric kernels, backed by numba when available (see _backend)."""

from .._backend import USE_NUMBA, backend_name

if USE_NUMBA:
    from . import _numba as _impl
else:
    from . import _numpy as _impl

ncc_matrix = _impl.ncc_matrix
sinc_resample = _impl.sinc_resample
iir_cascade = _impl.iir_cascade
conv3x3_fwd = _impl.conv3x3_fwd
conv3x3_bwd_x = _impl.conv3x3_bwd_x
conv3x3_bwd_w = _impl.conv3x3_bwd_w
maxpool2_fwd = _impl.maxpool2_fwd
maxpool2_bwd = _impl.maxpool2_bwd
smo_solve = _impl.smo_solve
best_gini_split = _impl.best_gini_split

__all__ = [
    "USE_NUMBA",
    "backend_name",
    "ncc_matrix",
    "sinc_resample",
    "iir_cascade",
    "conv3x3_fwd",
    "conv3x3_bwd_x",
    "conv3x3_bwd_w",
    "maxpool2_fwd",
    "maxpool2_bwd",
    "smo_solve",
    "best_gini_split",
]

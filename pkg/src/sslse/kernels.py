"""Kernel backend selection: compiled extension if built, numpy fallback otherwise.

Set ``SSLSE_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
for debugging).
"""
import os

from . import _kernels_ref

if os.environ.get("SSLSE_PURE_PYTHON"):
    _impl = _kernels_ref
    BACKEND = "numpy"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_ref
        BACKEND = "numpy"

polyphase_resample = _impl.polyphase_resample
overlap_add = _impl.overlap_add

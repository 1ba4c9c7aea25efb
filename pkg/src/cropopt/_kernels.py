"""Kernel backend selection.

CROPOPT_KERNELS=numba (default) uses the compiled loops; CROPOPT_KERNELS=numpy
forces the pure-numpy fallback. When numba is requested but cannot be imported
the fallback is used silently, so the package works on interpreters without a
working compiler toolchain.
"""

from __future__ import annotations

import os

_requested = os.environ.get("CROPOPT_KERNELS", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise RuntimeError(
        f"CROPOPT_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _kernels_numba as _impl
        backend_name = "numba"
    except ImportError:
        from . import _kernels_numpy as _impl
        backend_name = "numpy"
else:
    from . import _kernels_numpy as _impl
    backend_name = "numpy"

sample_crop = _impl.sample_crop
resize_bilinear = _impl.resize_bilinear
blur_axis0 = _impl.blur_axis0
blur_axis1 = _impl.blur_axis1

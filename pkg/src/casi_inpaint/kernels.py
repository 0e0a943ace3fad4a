"""Selects the compiled kernels when importable, else the numpy fallback.

Set ``CASI_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if not os.environ.get("CASI_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback

im2col = _impl.im2col
col2im = _impl.col2im
entropy_map = _impl.entropy_map
xoshiro_fill = _impl.xoshiro_fill

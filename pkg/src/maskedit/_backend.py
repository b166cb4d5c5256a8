"""Kernel backend selection.

The compiled extension is preferred. Set ``MASKEDIT_PURE_PYTHON=1`` to force
the numpy fallback (useful for benchmarks and for cross-checking backends).
"""

import os

from . import _kernels_py

kernels = _kernels_py
NAME = "python"

if os.environ.get("MASKEDIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        kernels = _compiled
        NAME = "cython"

"""Select the kernel implementation at import time.

The compiled extension is preferred. Set ``MAGLOC_PURE_PYTHON=1`` to force
the numpy fallback (useful for debugging and for the benchmark).
"""

import os

if os.environ.get("MAGLOC_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as kernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:
        from . import _pykernels as kernels

BACKEND = "cython" if kernels.__name__.endswith("_ckernels") else "python"

__all__ = ["kernels", "BACKEND"]

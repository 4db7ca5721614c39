"""Pick the flip kernel backend at import time.

The compiled extension is preferred; set ``CONSAT_PURE_PYTHON=1`` to force
the pure-Python twin.
"""

import os

from . import _kernel_py

PyFlipKernel = _kernel_py.FlipKernel

try:
    if os.environ.get("CONSAT_PURE_PYTHON"):
        raise ImportError("pure Python requested")
    from ._kernel import FlipKernel as CFlipKernel
except ImportError:
    CFlipKernel = None

FlipKernel = CFlipKernel or PyFlipKernel
BACKEND = "cython" if CFlipKernel is not None else "python"

"""Select the kernel implementation at import time.

The compiled extension is preferred; ``SPARSEFIELD_PURE_PYTHON=1`` forces the
numpy fallback (used by the benchmark and by backend-parity tests).
"""
import os

from . import _kernels_py

if os.environ.get("SPARSEFIELD_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "cython"
    except ImportError:  # extension not built
        kernels = _kernels_py
        BACKEND = "python"


def compiled_kernels():
    """Return the compiled module, or ``None`` when it is not importable."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels

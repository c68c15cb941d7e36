"""Selects the compiled kernels when available, else the pure-Python twins.

Set ``PMPKIT_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
by the kernel-parity tests).
"""

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("PMPKIT_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py
    else:
        BACKEND = "cython"
else:
    _impl = _kernels_py

dopri5 = _impl.dopri5
dense_eval = _impl.dense_eval
chatter_sup = _impl.chatter_sup

DONE = _kernels_py.DONE
STOPPED = _kernels_py.STOPPED
MAX_STEPS = _kernels_py.MAX_STEPS
NONFINITE = _kernels_py.NONFINITE
STEP_UNDERFLOW = _kernels_py.STEP_UNDERFLOW

__all__ = ["BACKEND", "dopri5", "dense_eval", "chatter_sup"]

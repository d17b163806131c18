"""Backend selection for the filter-bank kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``TAFILTER_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("TAFILTER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass

EPS = _kernels_py.EPS
bank_weights = _impl.bank_weights
bank_forward = _impl.bank_forward
bank_backward = _impl.bank_backward

__all__ = ["BACKEND", "EPS", "bank_weights", "bank_forward", "bank_backward"]

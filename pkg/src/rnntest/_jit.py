"""Selects between numba-compiled kernels and the pure-numpy fallback.

Set ``RNNTEST_DISABLE_NUMBA=1`` to force the numpy path. The flag is read
once at import time.
"""
import os

_FALSE = {"", "0", "false", "no", "off"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("RNNTEST_DISABLE_NUMBA", "").strip().lower() in _FALSE


def njit(func):
    """``numba.njit(cache=True)`` when numba is available, identity otherwise."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True)(func)

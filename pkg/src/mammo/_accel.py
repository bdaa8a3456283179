"""Numba switch.

Set ``MAMMO_DISABLE_NUMBA=1`` to run every hot loop through its pure-numpy
twin. The flag is read once at import time.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_FALSY = {"", "0", "false", "no", "off"}

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("MAMMO_DISABLE_NUMBA", "").strip().lower() in _FALSY


def njit(func):
    """Compile ``func`` in nopython mode when numba is present, else return it unchanged."""
    if NUMBA_AVAILABLE:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

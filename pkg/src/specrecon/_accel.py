"""Numba switch.

Set ``SPECRECON_DISABLE_NUMBA=1`` to run every kernel through the pure-numpy
path. The flag is read once at import time.
"""
import os

_disabled = os.environ.get("SPECRECON_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    import numba

    USE_NUMBA = True

    def njit(fn):
        return numba.njit(cache=True, nogil=True)(fn)

except ImportError:
    USE_NUMBA = False

    def njit(fn):
        return fn

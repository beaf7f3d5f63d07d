"""Kernel backend selection.

Hot loops are written once as plain Python over numpy arrays and compiled
with numba when available.  Set ``MUMDP_DISABLE_NUMBA=1`` to force the
pure-numpy / interpreted path (useful for debugging and for the benchmark).
"""

import os

_FALSY = {"", "0", "false", "no", "off"}

DISABLED = os.environ.get("MUMDP_DISABLE_NUMBA", "").strip().lower() not in _FALSY

try:
    if DISABLED:
        raise ImportError
    import numba as _numba
    USE_NUMBA = True
except ImportError:
    _numba = None
    USE_NUMBA = False

BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(fn):
    """Compile ``fn`` in nopython mode, or return it untouched on the fallback path."""
    if USE_NUMBA:
        return _numba.njit(cache=True)(fn)
    return fn

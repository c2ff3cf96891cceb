"""Optional numba acceleration.

Set ``SREFI_DISABLE_NUMBA=1`` to force the pure-numpy code paths, e.g. for
debugging or on platforms without an LLVM build of numba.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("SREFI_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by SREFI_DISABLE_NUMBA")
    from numba import njit as _numba_njit

    HAS_NUMBA = True
except ImportError:
    _numba_njit = None
    HAS_NUMBA = False


def njit(func):
    """Compile ``func`` with numba when available, else return it unchanged."""
    if _numba_njit is None:
        return func
    return _numba_njit(cache=True, nogil=True)(func)


def use_numba() -> bool:
    return HAS_NUMBA

"""Kernel backend switch.

Set ``LCGALERKIN_BACKEND=numpy`` to run every hot kernel through its
vectorised numpy twin instead of the numba-compiled loop. The choice is
read once at import time.
"""
from __future__ import annotations

import os

try:  # numba is optional at runtime
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

BACKEND_ENV = "LCGALERKIN_BACKEND"


def requested_backend() -> str:
    return os.environ.get(BACKEND_ENV, "numba").strip().lower()


HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and requested_backend() != "numpy"


def njit(fn):
    """Compile with numba when available, otherwise return ``fn`` untouched."""
    if not HAVE_NUMBA:
        return fn
    return _numba.njit(cache=True, fastmath=False)(fn)


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl


def active_backend() -> str:
    return "numba" if USE_NUMBA else "numpy"

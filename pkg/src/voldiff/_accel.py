"""Optional numba acceleration.

Kernels in :mod:`voldiff.kernels` are written twice: a loop form compiled
with numba, and a vectorised numpy form.  Set ``VOLDIFF_NUMBA=0`` to force
the numpy path (also used automatically when numba is not importable).
"""

import os

_flag = os.environ.get("VOLDIFF_NUMBA", "1").strip().lower()
WANT_NUMBA = _flag not in ("0", "false", "no", "off")

try:
    import numba as _numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAS_NUMBA = False

USE_NUMBA = WANT_NUMBA and HAS_NUMBA


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAS_NUMBA:
        return _numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"

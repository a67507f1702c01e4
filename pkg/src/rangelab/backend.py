"""Numba/numpy backend selection.

Hot kernels live in :mod:`rangelab._fastpath` in two flavours: numba
``@njit`` loops and vectorized numpy equivalents.  The numba flavour is
used when numba imports cleanly and the environment variable
``RANGELAB_NO_NUMBA`` is unset (or "0").  Both flavours produce the same
integer statistics, so switching backends never changes results, only
speed.
"""

from __future__ import annotations

import os

_ENV_FLAG = "RANGELAB_NO_NUMBA"

try:
    import numba
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    numba = None
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        """Decorator stand-in so modules import without numba."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap


def numba_disabled_by_env() -> bool:
    return os.environ.get(_ENV_FLAG, "0") not in ("", "0")


def use_numba() -> bool:
    """True when compiled kernels should be dispatched."""
    return HAS_NUMBA and not numba_disabled_by_env()


def backend_name() -> str:
    return "numba" if use_numba() else "numpy"

"""Optional numba acceleration.

Set ``LGK_DISABLE_NUMBA=1`` (or run without numba installed) to use the
pure-numpy kernels instead of the compiled loops.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None

NUMBA_AVAILABLE = numba is not None
NUMBA_DISABLED = os.environ.get("LGK_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
USE_NUMBA = NUMBA_AVAILABLE and not NUMBA_DISABLED


def njit(func=None, **kwargs):
    """``numba.njit`` when available, otherwise the undecorated function."""
    if not NUMBA_AVAILABLE:
        if func is not None:
            return func
        return lambda f: f
    if func is not None:
        return numba.njit(**kwargs)(func)
    return numba.njit(**kwargs)

"""Backend selection for the compiled kernels.

Set ``WISEALE_DISABLE_NUMBA=1`` to force the pure-numpy kernels. This only
picks how the hot loops execute; it never changes run configuration.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("WISEALE_DISABLE_NUMBA", "").strip() in ("", "0")


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is installed, else return it as-is."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

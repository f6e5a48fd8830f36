"""Kernel backend selection.

``BGBENCH_BACKEND=numpy`` forces the pure-numpy kernels; the default is numba
when it imports. The choice is read once at import time.
"""

import os

_requested = os.environ.get("BGBENCH_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"BGBENCH_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _requested == "numba"
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, otherwise a no-op decorator.

    Compiled regardless of the env flag so both paths stay testable.
    """
    kwargs.setdefault("cache", True)
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f

"""Backend selection for the hot kernels.

Kernels are written once as plain loops and compiled with numba when it is
available.  Setting ``BILLIARD_MME_NO_NUMBA=1`` selects the vectorised numpy
implementations instead; both paths consume random numbers identically.
"""
import os

NO_NUMBA_ENV = "BILLIARD_MME_NO_NUMBA"

try:
    import numba as _nb
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    _nb = None


def _flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = _nb is not None and not _flag(NO_NUMBA_ENV)


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or the identity when the JIT is disabled."""
    kwargs.setdefault("cache", True)
    if _nb is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda func: func
    return _nb.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"

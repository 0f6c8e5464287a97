"""Optional numba acceleration.

Set ``CECFLOW_NUMBA=0`` to run every kernel as plain Python over numpy
arrays. The flag is read once, at import time.
"""
import os

_FLAG = os.environ.get("CECFLOW_NUMBA", "1").strip().lower()

try:
    if _FLAG in ("0", "false", "no", "off"):
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None

NUMBA_ENABLED = _numba is not None


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, otherwise a no-op decorator."""
    if NUMBA_ENABLED:
        kwargs.setdefault("cache", True)
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(f):
        return f

    return wrapper


def python_version(kernel):
    """Return the uncompiled function behind a (possibly) jitted kernel."""
    return getattr(kernel, "py_func", kernel)

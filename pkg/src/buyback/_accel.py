"""Optional numba acceleration.

Set ``BUYBACK_DISABLE_NUMBA=1`` to run every kernel as plain Python on numpy
arrays.  Both paths run the same loop source except for the two step-function
integrals, which switch to vectorised numpy bodies; results agree to rounding.
"""
import os

DISABLED = os.environ.get("BUYBACK_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if DISABLED:
        raise ImportError
    from numba import njit as _njit

    ENABLED = True
except ImportError:
    ENABLED = False
    _njit = None


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, identity otherwise."""
    if ENABLED:
        kwargs.setdefault("cache", True)
        return _njit(*args, **kwargs)

    def wrap(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap

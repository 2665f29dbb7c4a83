"""Backend switch for the compiled kernels.

The numba path is used when numba imports and ``DSMC_NUMBA`` is not set to a
false-like value (``0``, ``false``, ``no``, ``off``). The flag is read once, at
import; :func:`dsmc.kernels.set_backend` switches at runtime.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _env_flag(name, default="1"):
    value = os.environ.get(name, default).strip().lower()
    return value not in {"0", "false", "no", "off", ""}


USE_NUMBA = HAVE_NUMBA and _env_flag("DSMC_NUMBA")

# nnan/ninf are left out on purpose: the kernels see -inf log-weights.
FASTMATH = {"reassoc", "contract", "nsz", "arcp"}


def njit(*args, **kwargs):
    """``numba.njit`` with the package defaults, or identity without numba."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return numba.njit(*args, **kwargs)

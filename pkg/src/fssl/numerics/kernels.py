"""Kernel backend selection.

The compiled backend is used when it imports; set ``FSSL_KERNELS=python`` to
force the numpy fallback. Both expose conv2d_forward, conv2d_backward,
lstm_forward and lstm_backward.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

BACKENDS = {"python": _kernels_py}
if _kernels_c is not None:
    BACKENDS["cython"] = _kernels_c


def get_backend(name=None):
    if name is None:
        name = os.environ.get("FSSL_KERNELS", "cython" if _kernels_c is not None else "python")
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


_active = get_backend()
BACKEND = "cython" if _active is _kernels_c else "python"


def use(name):
    """Switch the process-wide kernel backend; returns the previous name."""
    global _active, BACKEND
    prev = BACKEND
    _active = get_backend(name)
    BACKEND = name
    return prev


def conv2d_forward(xp, w, b, sh, sw):
    return _active.conv2d_forward(xp, w, b, sh, sw)


def conv2d_backward(xp, w, gy, sh, sw):
    return _active.conv2d_backward(xp, w, gy, sh, sw)


def lstm_forward(x, wx, wh, b):
    return _active.lstm_forward(x, wx, wh, b)


def lstm_backward(x, wx, wh, hs, cache, ghs):
    return _active.lstm_backward(x, wx, wh, hs, cache, ghs)

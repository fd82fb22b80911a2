"""Kernel dispatch: compiled extension when available, NumPy otherwise.

Set ``HYBRID_SNN_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the
implementation picked at import time; :func:`use_backend` switches it at run
time (used by the benchmark and the cross-backend tests).
"""

import os

import numpy as np

from . import _fallback
from ._fallback import FAMILY_EXP, FAMILY_LINEAR, FAMILY_STDB

try:
    from . import _ext
except ImportError:  # extension not built
    _ext = None

_impl = _fallback
BACKEND = "python"
if _ext is not None and os.environ.get("HYBRID_SNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    _impl = _ext
    BACKEND = "compiled"

__all__ = [
    "BACKEND", "FAMILY_EXP", "FAMILY_LINEAR", "FAMILY_STDB", "available_backends",
    "avgpool", "avgpool_backward", "col2im", "im2col", "lif_backward_scan", "lif_forward_scan", "use_backend",
]


def available_backends():
    return ["python"] + (["compiled"] if _ext is not None else [])


def use_backend(name):
    """Select ``"python"`` or ``"compiled"``; returns the previous backend name."""
    global _impl, BACKEND
    previous = BACKEND
    if name == "compiled":
        if _ext is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        _impl = _ext
    elif name == "python":
        _impl = _fallback
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
    return previous


def _c(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def lif_forward_scan(current, u, s, prev, threshold, leak, t0):
    """Flattened LIF scan; ``current`` is (steps, n) and the state vectors are (n,)."""
    return _impl.lif_forward_scan(current, u, s, prev, threshold, leak, int(t0))


def lif_backward_scan(grad_spikes, u_rec, s_rec, threshold, leak, t0,
                      family, alpha, beta, lut, carry):
    dtype = u_rec.dtype
    if lut is not None:
        lut = _c(lut, dtype)
    return _impl.lif_backward_scan(_c(grad_spikes, dtype), u_rec, s_rec, threshold, leak,
                                   int(t0), int(family), alpha, beta, lut, carry)


def im2col(x, k, stride, pad):
    """Columns of shape (c*k*k, n*ho*wo) for an (n, c, h, w) input."""
    return _impl.im2col(_c(x, x.dtype), int(k), int(stride), int(pad))


def col2im(cols, shape, k, stride, pad):
    n, c, h, w = shape
    return _impl.col2im(_c(cols, cols.dtype), n, c, h, w, int(k), int(stride), int(pad))


def avgpool(x, k):
    return _impl.avgpool(_c(x, x.dtype), int(k))


def avgpool_backward(g, k):
    return _impl.avgpool_backward(_c(g, g.dtype), int(k))

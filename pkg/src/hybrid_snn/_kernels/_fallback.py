"""Pure-NumPy implementations of the hot kernels.

Each function here has a compiled twin in ``_ext.pyx`` with an identical
signature. Arrays passed in are assumed C-contiguous and already of the
working dtype; the dispatching layer in ``hybrid_snn._kernels`` takes care of
that.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FAMILY_STDB = 0
FAMILY_LINEAR = 1
FAMILY_EXP = 2


def lif_forward_scan(current, u, s, prev, threshold, leak, t0):
    """Run LIF dynamics over ``current.shape[0]`` consecutive steps.

    ``u``, ``s`` and ``prev`` hold the state entering step ``t0`` and are
    updated in place. Returns ``(spikes, u_rec, s_rec, n_bad, n_spikes)``
    where ``n_bad`` counts non-finite membrane values encountered.
    """
    steps = current.shape[0]
    spikes = np.empty_like(current)
    u_rec = np.empty_like(current)
    s_rec = np.empty(current.shape, dtype=np.int32)
    v = current.dtype.type(threshold)
    lam = current.dtype.type(leak)
    n_bad = 0
    n_spikes = 0
    for k in range(steps):
        t = t0 + k
        np.multiply(u, lam, out=u)
        u += current[k]
        np.subtract(u, v, out=u, where=prev != 0)  # no inf*0 for silent neurons
        n_bad += int(np.count_nonzero(~np.isfinite(u)))
        fired = u > v
        prev[...] = fired
        s[fired] = t
        n_spikes += int(np.count_nonzero(fired))
        spikes[k] = prev
        u_rec[k] = u
        s_rec[k] = s
    return spikes, u_rec, s_rec, n_bad, n_spikes


def surrogate_grad(family, u_rec, s_rec, threshold, t0, alpha, beta, lut):
    """Evaluate d(spike)/d(u) for every recorded step, shape ``u_rec.shape``."""
    dtype = u_rec.dtype.type
    if family == FAMILY_STDB:
        t = np.arange(t0, t0 + s_rec.shape[0], dtype=np.int64)
        dt = t.reshape((-1,) + (1,) * (s_rec.ndim - 1)) - s_rec
        if lut is not None:
            return lut[dt]
        return dtype(alpha) * np.exp(-dtype(beta) * dt.astype(u_rec.dtype))
    dist = np.abs(u_rec - dtype(threshold))
    if family == FAMILY_LINEAR:
        return dtype(alpha) * np.maximum(dtype(0), dtype(1) - dist)
    if family == FAMILY_EXP:
        return dtype(alpha) * np.exp(-dtype(beta) * dist)
    raise ValueError(f"unknown surrogate family code {family}")


def lif_backward_scan(grad_spikes, u_rec, s_rec, threshold, leak, t0,
                      family, alpha, beta, lut, carry):
    """Reverse-time adjoint of :func:`lif_forward_scan`.

    ``grad_spikes[k]`` is dL/do at step ``t0 + k`` arriving from downstream
    layers. ``carry`` holds dL/du for the step after the segment and is
    overwritten with dL/du at the segment's first step. Returns dL/dI for
    every step, which equals dL/du since the input current enters additively.
    """
    sigma = surrogate_grad(family, u_rec, s_rec, threshold, t0, alpha, beta, lut)
    v = u_rec.dtype.type(threshold)
    lam = u_rec.dtype.type(leak)
    grad_current = np.empty_like(grad_spikes)
    gu = carry
    for k in range(grad_spikes.shape[0] - 1, -1, -1):
        gu = lam * gu + sigma[k] * (grad_spikes[k] - v * gu)
        grad_current[k] = gu
    carry[...] = gu
    return grad_current


def im2col(x, k, stride, pad):
    """Unfold (n, c, h, w) into columns of shape (c*k*k, n*ho*wo)."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # (n, c, ho, wo, k, k) -> (c, k, k, n, ho, wo)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * k * k, n * ho * wo)


def col2im(cols, n, c, h, w, k, stride, pad):
    """Adjoint of :func:`im2col`."""
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    g = cols.reshape(c, k, k, n, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                g[:, i, j].transpose(1, 0, 2, 3)
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def avgpool(x, k):
    """Mean over non-overlapping k x k windows; window terms added row by row."""
    n, c, h, w = x.shape
    acc = np.zeros((n, c, h // k, w // k), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            acc += x[:, :, i::k, j::k]
    acc /= x.dtype.type(k * k)
    return acc


def avgpool_backward(g, k):
    n, c, ho, wo = g.shape
    scaled = g / g.dtype.type(k * k)
    out = np.empty((n, c, ho * k, wo * k), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i::k, j::k] = scaled
    return out

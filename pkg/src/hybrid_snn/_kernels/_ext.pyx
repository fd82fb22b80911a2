# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LIF scan and im2col kernels.

Signatures and operation order mirror ``_fallback.py`` so that, with
floating-point contraction disabled at compile time, both backends produce
identical spikes and identical gradients for the spike-time surrogate.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expf, fabs, fabsf, isfinite

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline float _exp(float x) nogil:
    return expf(x)


def lif_forward_scan(real[:, ::1] current, real[::1] u, int[::1] s, real[::1] prev,
                     threshold, leak, long t0):
    cdef Py_ssize_t steps = current.shape[0]
    cdef Py_ssize_t n = current.shape[1]
    dtype = np.float32 if real is float else np.float64
    spikes_arr = np.empty((steps, n), dtype=dtype)
    u_rec_arr = np.empty((steps, n), dtype=dtype)
    s_rec_arr = np.empty((steps, n), dtype=np.int32)
    cdef real[:, ::1] spikes = spikes_arr
    cdef real[:, ::1] u_rec = u_rec_arr
    cdef int[:, ::1] s_rec = s_rec_arr
    cdef real v = threshold
    cdef real lam = leak
    cdef real x
    cdef Py_ssize_t k, i
    cdef long n_bad = 0
    cdef long n_spikes = 0
    cdef int t
    with nogil:
        for k in range(steps):
            t = <int>(t0 + k)
            for i in range(n):
                x = lam * u[i]
                x = x + current[k, i]
                if prev[i] != 0:
                    x = x - v * prev[i]
                if not isfinite(x):
                    n_bad += 1
                u[i] = x
                if x > v:
                    prev[i] = 1
                    s[i] = t
                    n_spikes += 1
                else:
                    prev[i] = 0
                spikes[k, i] = prev[i]
                u_rec[k, i] = x
                s_rec[k, i] = s[i]
    return spikes_arr, u_rec_arr, s_rec_arr, n_bad, n_spikes


def lif_backward_scan(real[:, ::1] grad_spikes, real[:, ::1] u_rec, int[:, ::1] s_rec,
                      threshold, leak, long t0, int family, alpha, beta,
                      lut, real[::1] carry):
    cdef Py_ssize_t steps = grad_spikes.shape[0]
    cdef Py_ssize_t n = grad_spikes.shape[1]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((steps, n), dtype=dtype)
    cdef real[:, ::1] out = out_arr
    cdef real v = threshold
    cdef real lam = leak
    cdef real a = alpha
    cdef real b = beta
    cdef real one = 1
    cdef real zero = 0
    cdef real sig, gu, d, tmp
    cdef real[::1] table
    cdef bint use_lut = lut is not None
    cdef Py_ssize_t k, i
    cdef long dt
    if use_lut:
        table = lut
    with nogil:
        for k in range(steps - 1, -1, -1):
            for i in range(n):
                if family == 0:
                    dt = t0 + k - s_rec[k, i]
                    if use_lut:
                        sig = table[dt]
                    else:
                        tmp = -b * <real>dt
                        if real is float:
                            sig = a * _exp(tmp)
                        else:
                            sig = a * exp(tmp)
                elif family == 1:
                    if real is float:
                        d = fabsf(u_rec[k, i] - v)
                    else:
                        d = fabs(u_rec[k, i] - v)
                    tmp = one - d
                    sig = a * (tmp if tmp > zero else zero)
                else:
                    if real is float:
                        d = fabsf(u_rec[k, i] - v)
                        sig = a * _exp(-b * d)
                    else:
                        d = fabs(u_rec[k, i] - v)
                        sig = a * exp(-b * d)
                gu = carry[i]
                gu = lam * gu + sig * (grad_spikes[k, i] - v * gu)
                carry[i] = gu
                out[k, i] = gu
    return out_arr


def im2col(real[:, :, :, ::1] x, int k, int stride, int pad):
    """Unfold (n, c, h, w) into columns of shape (c*k*k, n*ho*wo)."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t hp = h + 2 * pad, wp = w + 2 * pad
    cdef Py_ssize_t ho = (hp - k) // stride + 1
    cdef Py_ssize_t wo = (wp - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.empty((c * k * k, n * ho * wo), dtype=dtype)
    cdef real[:, ::1] cols = cols_arr
    cdef real[:, :, :, ::1] xp
    if pad:
        xp_arr = np.zeros((n, c, hp, wp), dtype=dtype)
        xp = xp_arr
        xp[:, :, pad:pad + h, pad:pad + w] = x
    else:
        xp = x
    cdef Py_ssize_t b, oy, ox, ch, i, j, row
    cdef real* dst
    cdef real* src
    with nogil:
        for ch in range(c):
            for i in range(k):
                for j in range(k):
                    row = (ch * k + i) * k + j
                    for b in range(n):
                        for oy in range(ho):
                            dst = &cols[row, (b * ho + oy) * wo]
                            src = &xp[b, ch, oy * stride + i, j]
                            if stride == 1:
                                for ox in range(wo):
                                    dst[ox] = src[ox]
                            else:
                                for ox in range(wo):
                                    dst[ox] = src[ox * stride]
    return cols_arr


def col2im(real[:, ::1] cols, Py_ssize_t n, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w,
           int k, int stride, int pad):
    """Adjoint of :func:`im2col`; accumulates in the fallback's (i, j) order."""
    cdef Py_ssize_t hp = h + 2 * pad, wp = w + 2 * pad
    cdef Py_ssize_t ho = (hp - k) // stride + 1
    cdef Py_ssize_t wo = (wp - k) // stride + 1
    dtype = np.float32 if real is float else np.float64
    outp_arr = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] outp = outp_arr
    cdef Py_ssize_t b, oy, ox, ch, i, j, row
    cdef real* dst
    cdef real* src
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        row = (ch * k + i) * k + j
                        for oy in range(ho):
                            src = &cols[row, (b * ho + oy) * wo]
                            dst = &outp[b, ch, oy * stride + i, j]
                            for ox in range(wo):
                                dst[ox * stride] += src[ox]
    if pad:
        return np.ascontiguousarray(outp_arr[:, :, pad:pad + h, pad:pad + w])
    return outp_arr


def avgpool(real[:, :, :, ::1] x, int k):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // k, wo = x.shape[3] // k
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, ho, wo), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef real kk = k * k
    cdef Py_ssize_t b, ch, oy, ox, i, j
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        for oy in range(ho):
                            for ox in range(wo):
                                out[b, ch, oy, ox] += x[b, ch, oy * k + i, ox * k + j]
                for oy in range(ho):
                    for ox in range(wo):
                        out[b, ch, oy, ox] = out[b, ch, oy, ox] / kk
    return out_arr


def avgpool_backward(real[:, :, :, ::1] g, int k):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], ho = g.shape[2], wo = g.shape[3]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.empty((n, c, ho * k, wo * k), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef real kk = k * k
    cdef real val
    cdef Py_ssize_t b, ch, oy, ox, i, j
    with nogil:
        for b in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        val = g[b, ch, oy, ox] / kk
                        for i in range(k):
                            for j in range(k):
                                out[b, ch, oy * k + i, ox * k + j] = val
    return out_arr

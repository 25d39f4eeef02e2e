# cython: language_level=3
"""Compiled hot kernels: image resize and the row-wise transformer primitives.

The numpy module ``pcvit._kernels_py`` is the reference fallback; both expose
the same functions with the same arithmetic ordering.
"""

import numpy as np

from cython cimport floating
from libc.math cimport exp, sqrt, tanh

cdef double GELU_C = 0.7978845608028654  # sqrt(2/pi)
cdef double GELU_K = 0.044715


ctypedef long long i64


cdef void _axis_weights(Py_ssize_t n_in, Py_ssize_t n_out,
                        Py_ssize_t[::1] i0, Py_ssize_t[::1] i1,
                        i64[::1] frac) noexcept nogil:
    # sample position s = ((2k + 1) n_in - n_out) / (2 n_out), kept as an
    # integer numerator over the common denominator 2 n_out
    cdef i64 den = 2 * <i64>n_out
    cdef i64 hi = <i64>(n_in - 1) * den
    cdef i64 num, lo
    cdef Py_ssize_t k
    for k in range(n_out):
        num = (2 * <i64>k + 1) * <i64>n_in - <i64>n_out
        if num < 0:
            num = 0
        if num > hi:
            num = hi
        lo = num // den
        i0[k] = <Py_ssize_t>lo
        i1[k] = <Py_ssize_t>lo + 1 if lo + 1 < n_in else n_in - 1
        frac[k] = num - lo * den


def resize_bilinear(const unsigned char[:, ::1] src, Py_ssize_t out_h, Py_ssize_t out_w):
    """Half-pixel-centre bilinear resize of a 2-D uint8 array.

    Computed exactly in 64-bit integers and rounded half up.
    """
    cdef Py_ssize_t in_h = src.shape[0], in_w = src.shape[1]
    out = np.empty((out_h, out_w), dtype=np.uint8)
    cdef unsigned char[:, ::1] dst = out
    y0 = np.empty(out_h, dtype=np.intp)
    y1 = np.empty(out_h, dtype=np.intp)
    fy = np.empty(out_h, dtype=np.int64)
    x0 = np.empty(out_w, dtype=np.intp)
    x1 = np.empty(out_w, dtype=np.intp)
    fx = np.empty(out_w, dtype=np.int64)
    cdef Py_ssize_t[::1] y0v = y0, y1v = y1, x0v = x0, x1v = x1
    cdef i64[::1] fyv = fy, fxv = fx
    cdef i64 dx = 2 * <i64>out_w, dy = 2 * <i64>out_h
    cdef i64 den = dx * dy
    cdef Py_ssize_t r, c
    cdef i64 top, bot, v, wx, wy
    with nogil:
        _axis_weights(in_h, out_h, y0v, y1v, fyv)
        _axis_weights(in_w, out_w, x0v, x1v, fxv)
        for r in range(out_h):
            wy = fyv[r]
            for c in range(out_w):
                wx = fxv[c]
                top = src[y0v[r], x0v[c]] * (dx - wx) + src[y0v[r], x1v[c]] * wx
                bot = src[y1v[r], x0v[c]] * (dx - wx) + src[y1v[r], x1v[c]] * wx
                v = (2 * (top * (dy - wy) + bot * wy) + den) // (2 * den)
                dst[r, c] = <unsigned char>v
    return out


def layer_norm_forward(floating[:, ::1] x, floating[::1] gamma, floating[::1] beta, double eps):
    """Row-wise layer norm; returns ``(y, xhat, rstd)`` with float64 ``rstd``."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((n, d), dtype=dtype)
    xh_arr = np.empty((n, d), dtype=dtype)
    rstd_arr = np.empty(n, dtype=np.float64)
    cdef floating[:, ::1] y = y_arr, xh = xh_arr
    cdef double[::1] rstd = rstd_arr
    cdef double mean, var, diff, r, xv
    with nogil:
        for i in range(n):
            mean = 0.0
            for j in range(d):
                mean += x[i, j]
            mean /= d
            var = 0.0
            for j in range(d):
                diff = x[i, j] - mean
                var += diff * diff
            var /= d
            r = 1.0 / sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                xv = (x[i, j] - mean) * r
                xh[i, j] = <floating>xv
                y[i, j] = <floating>(xv * gamma[j] + beta[j])
    return y_arr, xh_arr, rstd_arr


def layer_norm_backward(floating[:, ::1] dy, floating[:, ::1] xhat, double[::1] rstd, floating[::1] gamma):
    cdef Py_ssize_t n = dy.shape[0], d = dy.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.empty((n, d), dtype=dtype)
    dg64 = np.zeros(d, dtype=np.float64)
    db64 = np.zeros(d, dtype=np.float64)
    cdef floating[:, ::1] dx = dx_arr
    cdef double[::1] dg = dg64, db = db64
    cdef double m1, m2, g
    with nogil:
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                g = dy[i, j] * <double>gamma[j]
                m1 += g
                m2 += g * xhat[i, j]
                dg[j] += <double>dy[i, j] * xhat[i, j]
                db[j] += dy[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                g = dy[i, j] * <double>gamma[j]
                dx[i, j] = <floating>((g - m1 - xhat[i, j] * m2) * rstd[i])
    return dx_arr, dg64.astype(dtype), db64.astype(dtype)


def gelu_forward(floating[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    dtype = np.float32 if floating is float else np.float64
    out = np.empty(n, dtype=dtype)
    cdef floating[::1] o = out
    cdef double v, t
    with nogil:
        for i in range(n):
            v = x[i]
            t = tanh(GELU_C * (v + GELU_K * v * v * v))
            o[i] = <floating>(0.5 * v * (1.0 + t))
    return out


def gelu_backward(floating[::1] x, floating[::1] dy):
    cdef Py_ssize_t n = x.shape[0], i
    dtype = np.float32 if floating is float else np.float64
    out = np.empty(n, dtype=dtype)
    cdef floating[::1] o = out
    cdef double v, t, du
    with nogil:
        for i in range(n):
            v = x[i]
            t = tanh(GELU_C * (v + GELU_K * v * v * v))
            du = GELU_C * (1.0 + 3.0 * GELU_K * v * v)
            o[i] = <floating>(dy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du))
    return out


def softmax_rows(floating[:, ::1] x):
    """Softmax along axis 1 with per-row max subtraction, float64 accumulation."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((n, d), dtype=dtype)
    cdef floating[:, ::1] o = out
    tmp = np.empty(d, dtype=np.float64)
    cdef double[::1] e = tmp
    cdef double m, s
    with nogil:
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                e[j] = exp(x[i, j] - m)
                s += e[j]
            for j in range(d):
                o[i, j] = <floating>(e[j] / s)
    return out

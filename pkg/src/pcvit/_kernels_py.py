"""Vectorised numpy implementations of the hot kernels.

Used when the compiled ``pcvit._kernels`` extension is unavailable or when
``PCVIT_PURE_PYTHON=1`` is set. Every function mirrors the compiled version's
signature and arithmetic ordering; the resize kernel is bit-identical across
the two, the float kernels agree to within rounding of the final cast.
"""

import math

import numpy as np

GELU_C = math.sqrt(2.0 / math.pi)
GELU_K = 0.044715


def _axis_weights(n_in, n_out):
    # integer numerator of the sample position over the denominator 2 n_out
    den = 2 * n_out
    num = (2 * np.arange(n_out, dtype=np.int64) + 1) * n_in - n_out
    num = np.clip(num, 0, (n_in - 1) * den)
    i0 = num // den
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0.astype(np.intp), i1.astype(np.intp), num - i0 * den


def resize_bilinear(src, out_h, out_w):
    """Half-pixel-centre bilinear resize of a 2-D uint8 array, exact in int64."""
    in_h, in_w = src.shape
    y0, y1, fy = _axis_weights(in_h, out_h)
    x0, x1, fx = _axis_weights(in_w, out_w)
    dx, dy = 2 * out_w, 2 * out_h
    img = src.astype(np.int64)
    fx = fx[None, :]
    fy = fy[:, None]
    top = img[y0][:, x0] * (dx - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (dx - fx) + img[y1][:, x1] * fx
    den = dx * dy
    return ((2 * (top * (dy - fy) + bot * fy) + den) // (2 * den)).astype(np.uint8)


def layer_norm_forward(x, gamma, beta, eps):
    """Row-wise layer norm of a C-contiguous 2-D array.

    Returns ``(y, xhat, rstd)``; ``rstd`` is float64 per row.
    """
    x64 = x.astype(np.float64)
    mean = x64.sum(axis=1) / x.shape[1]
    centred = x64 - mean[:, None]
    var = (centred * centred).sum(axis=1) / x.shape[1]
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centred * rstd[:, None]
    y = xhat * gamma.astype(np.float64) + beta.astype(np.float64)
    return y.astype(x.dtype), xhat.astype(x.dtype), rstd


def layer_norm_backward(dy, xhat, rstd, gamma):
    """Gradients of :func:`layer_norm_forward` w.r.t. ``x``, ``gamma``, ``beta``."""
    dy64 = dy.astype(np.float64)
    xh64 = xhat.astype(np.float64)
    d = dy.shape[1]
    dgamma = (dy64 * xh64).sum(axis=0)
    dbeta = dy64.sum(axis=0)
    dxhat = dy64 * gamma.astype(np.float64)
    m1 = dxhat.sum(axis=1) / d
    m2 = (dxhat * xh64).sum(axis=1) / d
    dx = (dxhat - m1[:, None] - xh64 * m2[:, None]) * rstd[:, None]
    return dx.astype(dy.dtype), dgamma.astype(dy.dtype), dbeta.astype(dy.dtype)


def gelu_forward(x):
    x64 = x.astype(np.float64)
    t = np.tanh(GELU_C * (x64 + GELU_K * x64 * x64 * x64))
    return (0.5 * x64 * (1.0 + t)).astype(x.dtype)


def gelu_backward(x, dy):
    x64 = x.astype(np.float64)
    t = np.tanh(GELU_C * (x64 + GELU_K * x64 * x64 * x64))
    du = GELU_C * (1.0 + 3.0 * GELU_K * x64 * x64)
    dgelu = 0.5 * (1.0 + t) + 0.5 * x64 * (1.0 - t * t) * du
    return (dy.astype(np.float64) * dgelu).astype(x.dtype)


def softmax_rows(x):
    """Softmax along axis 1 of a 2-D array with per-row max subtraction."""
    x64 = x.astype(np.float64)
    e = np.exp(x64 - x64.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)).astype(x.dtype)

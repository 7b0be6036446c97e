"""Numpy implementations of the hot kernels.

The compiled extension ``regionclr._kernels_c`` provides the same six
functions with identical semantics; ``regionclr.backend`` picks one of the
two at import time. Keep the two files in lockstep: the parity tests in
tests/test_backend.py compare them element by element.

All functions take and return C-contiguous float64 arrays.
"""

import numpy as np

# tanh-form GELU constants: gelu(x) = 0.5 x (1 + tanh(c (x + a x^3)))
_C = 0.7978845608028654  # sqrt(2/pi)
_A = 0.044715


def softmax_rows_fwd(x):
    """Row-wise softmax, stabilized by subtracting each row's maximum."""
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def softmax_rows_bwd(y, dy):
    """Gradient of softmax_rows given its output y: dx = y * (dy - sum(dy*y))."""
    inner = (y * dy).sum(axis=-1, keepdims=True)
    return y * (dy - inner)


def layernorm_fwd(x, gain, bias, eps):
    """Row layernorm. Returns (y, xhat, rstd); xhat and rstd feed the backward."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd


def layernorm_bwd(xhat, rstd, gain, dy):
    """Gradients of layernorm: returns (dx, dgain, dbias)."""
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd
    return dx, dgain, dbias


def gelu_fwd(x):
    u = _C * (x + _A * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_bwd(x, dy):
    u = _C * (x + _A * x * x * x)
    t = np.tanh(u)
    du = _C * (1.0 + 3.0 * _A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)

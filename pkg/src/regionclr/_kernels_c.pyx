# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel core: one C pass per row instead of a chain of numpy temporaries.

Mirrors regionclr._kernels_py function for function; tests/test_backend.py
holds the two implementations together.
"""

import numpy as np

from libc.math cimport exp, log, sqrt, tanh

cdef double _C = 0.7978845608028654  # sqrt(2/pi)
cdef double _A = 0.044715


def softmax_rows_fwd(x):
    cdef double[:, ::1] xv = x
    cdef Py_ssize_t m = xv.shape[0], n = xv.shape[1], i, j
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double rowmax, total
    for i in range(m):
        rowmax = xv[i, 0]
        for j in range(1, n):
            if xv[i, j] > rowmax:
                rowmax = xv[i, j]
        total = 0.0
        for j in range(n):
            ov[i, j] = exp(xv[i, j] - rowmax)
            total += ov[i, j]
        for j in range(n):
            ov[i, j] /= total
    return out


def softmax_rows_bwd(y, dy):
    cdef double[:, ::1] yv = y, dyv = dy
    cdef Py_ssize_t m = yv.shape[0], n = yv.shape[1], i, j
    dx = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] dxv = dx
    cdef double inner
    for i in range(m):
        inner = 0.0
        for j in range(n):
            inner += yv[i, j] * dyv[i, j]
        for j in range(n):
            dxv[i, j] = yv[i, j] * (dyv[i, j] - inner)
    return dx


def layernorm_fwd(x, gain, bias, double eps):
    cdef double[:, ::1] xv = x
    cdef double[::1] gv = gain, bv = bias
    cdef Py_ssize_t m = xv.shape[0], n = xv.shape[1], i, j
    y = np.empty((m, n), dtype=np.float64)
    xhat = np.empty((m, n), dtype=np.float64)
    rstd = np.empty((m, 1), dtype=np.float64)
    cdef double[:, ::1] yv = y, hv = xhat, rv = rstd
    cdef double mu, var, d, r
    for i in range(m):
        mu = 0.0
        for j in range(n):
            mu += xv[i, j]
        mu /= n
        var = 0.0
        for j in range(n):
            d = xv[i, j] - mu
            var += d * d
        var /= n
        r = 1.0 / sqrt(var + eps)
        rv[i, 0] = r
        for j in range(n):
            hv[i, j] = (xv[i, j] - mu) * r
            yv[i, j] = hv[i, j] * gv[j] + bv[j]
    return y, xhat, rstd


def layernorm_bwd(xhat, rstd, gain, dy):
    cdef double[:, ::1] hv = xhat, rv = rstd, dyv = dy
    cdef double[::1] gv = gain
    cdef Py_ssize_t m = hv.shape[0], n = hv.shape[1], i, j
    dx = np.empty((m, n), dtype=np.float64)
    dgain = np.zeros(n, dtype=np.float64)
    dbias = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] dxv = dx
    cdef double[::1] dgv = dgain, dbv = dbias
    cdef double m1, m2, dh
    for i in range(m):
        m1 = 0.0
        m2 = 0.0
        for j in range(n):
            dgv[j] += dyv[i, j] * hv[i, j]
            dbv[j] += dyv[i, j]
            dh = dyv[i, j] * gv[j]
            m1 += dh
            m2 += dh * hv[i, j]
        m1 /= n
        m2 /= n
        for j in range(n):
            dxv[i, j] = (dyv[i, j] * gv[j] - m1 - hv[i, j] * m2) * rv[i, 0]
    return dx, dgain, dbias


def gelu_fwd(x):
    flat = np.ascontiguousarray(x).reshape(-1)
    cdef double[::1] xv = flat
    cdef Py_ssize_t n = xv.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef double u
    for i in range(n):
        u = _C * (xv[i] + _A * xv[i] * xv[i] * xv[i])
        ov[i] = 0.5 * xv[i] * (1.0 + tanh(u))
    return out.reshape(x.shape)


def gelu_bwd(x, dy):
    flat_x = np.ascontiguousarray(x).reshape(-1)
    flat_dy = np.ascontiguousarray(dy).reshape(-1)
    cdef double[::1] xv = flat_x, dyv = flat_dy
    cdef Py_ssize_t n = xv.shape[0], i
    dx = np.empty(n, dtype=np.float64)
    cdef double[::1] dxv = dx
    cdef double u, t, du
    for i in range(n):
        u = _C * (xv[i] + _A * xv[i] * xv[i] * xv[i])
        t = tanh(u)
        du = _C * (1.0 + 3.0 * _A * xv[i] * xv[i])
        dxv[i] = dyv[i] * (0.5 * (1.0 + t) + 0.5 * xv[i] * (1.0 - t * t) * du)
    return dx.reshape(x.shape)

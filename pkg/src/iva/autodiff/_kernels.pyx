# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels; same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()

BACKEND = "cython"

cdef double GELU_C = 0.7978845608028654


def softmax_forward(const double[:, ::1] x, double inv_tau):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    cdef double mx, s
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            for j in range(m):
                y[i, j] = (x[i, j] - mx) * inv_tau
    # numpy's exp is vectorised; libm's scalar exp is several times slower
    np.exp(out, out=out)
    with nogil:
        for i in range(n):
            s = 0.0
            for j in range(m):
                s += y[i, j]
            for j in range(m):
                y[i, j] = y[i, j] / s
    return out


def softmax_backward(const double[:, ::1] y, const double[:, ::1] gy, double inv_tau):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1], i, j
    cdef double dot
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] gx = out
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += gy[i, j] * y[i, j]
            for j in range(m):
                gx[i, j] = inv_tau * y[i, j] * (gy[i, j] - dot)
    return out


def layer_norm_forward(const double[:, ::1] x, const double[::1] gain,
                       const double[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    cdef double mu, var, r, d
    out = np.empty((n, m), dtype=np.float64)
    xh = np.empty((n, m), dtype=np.float64)
    rs = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[:, ::1] xhat = xh
    cdef double[::1] rstd = rs
    with nogil:
        for i in range(n):
            mu = 0.0
            for j in range(m):
                mu += x[i, j]
            mu = mu / m
            var = 0.0
            for j in range(m):
                d = x[i, j] - mu
                var += d * d
            r = 1.0 / sqrt(var / m + eps)
            rstd[i] = r
            for j in range(m):
                d = (x[i, j] - mu) * r
                xhat[i, j] = d
                y[i, j] = d * gain[j] + bias[j]
    return out, xh, rs


def layer_norm_backward(const double[:, ::1] gy, const double[:, ::1] xhat,
                        const double[::1] rstd, const double[::1] gain):
    cdef Py_ssize_t n = gy.shape[0], m = gy.shape[1], i, j
    cdef double sg, sgx, g
    out = np.empty((n, m), dtype=np.float64)
    gg = np.zeros(m, dtype=np.float64)
    gb = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] gx = out
    cdef double[::1] ggain = gg
    cdef double[::1] gbias = gb
    with nogil:
        for i in range(n):
            sg = 0.0
            sgx = 0.0
            for j in range(m):
                g = gy[i, j] * gain[j]
                sg += g
                sgx += g * xhat[i, j]
                ggain[j] += gy[i, j] * xhat[i, j]
                gbias[j] += gy[i, j]
            for j in range(m):
                g = gy[i, j] * gain[j]
                gx[i, j] = (rstd[i] / m) * (m * g - sg - xhat[i, j] * sgx)
    return out, gg, gb


def gelu_forward(const double[:, ::1] x):
    """Returns (gelu(x), sigmoid(2u)); the second array feeds the backward pass."""
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    cdef double v
    out = np.empty((n, m), dtype=np.float64)
    sig = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[:, ::1] s = sig
    with nogil:
        for i in range(n):
            for j in range(m):
                v = x[i, j]
                s[i, j] = -2.0 * GELU_C * (v + 0.044715 * v * v * v)
    # overflow to inf for very negative x gives the correct s = 0
    with np.errstate(over="ignore"):
        np.exp(sig, out=sig)
    with nogil:
        for i in range(n):
            for j in range(m):
                s[i, j] = 1.0 / (1.0 + s[i, j])
                y[i, j] = x[i, j] * s[i, j]
    return out, sig


def gelu_backward(const double[:, ::1] x, const double[:, ::1] s, const double[:, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    cdef double v, du
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] gx = out
    with nogil:
        for i in range(n):
            for j in range(m):
                v = x[i, j]
                du = GELU_C * (1.0 + 3 * 0.044715 * v * v)
                gx[i, j] = gy[i, j] * (s[i, j] + 2.0 * v * s[i, j] * (1.0 - s[i, j]) * du)
    return out


def cross_entropy_forward(const double[:, ::1] logits, const cnp.int64_t[::1] targets,
                          const double[::1] weights):
    cdef Py_ssize_t n = logits.shape[0], m = logits.shape[1], i, j
    cdef double mx, s, v
    nll_arr = np.empty(n, dtype=np.float64)
    pr = np.empty((n, m), dtype=np.float64)
    cdef double[::1] nll = nll_arr
    cdef double[:, ::1] probs = pr
    with nogil:
        for i in range(n):
            mx = logits[i, 0]
            for j in range(1, m):
                if logits[i, j] > mx:
                    mx = logits[i, j]
            s = 0.0
            for j in range(m):
                v = exp(logits[i, j] - mx)
                probs[i, j] = v
                s += v
            for j in range(m):
                probs[i, j] = probs[i, j] / s
            nll[i] = (log(s) - (logits[i, targets[i]] - mx)) * weights[i]
    return nll_arr, pr


def cross_entropy_backward(const double[:, ::1] probs, const cnp.int64_t[::1] targets,
                           const double[::1] weights, const double[::1] g):
    cdef Py_ssize_t n = probs.shape[0], m = probs.shape[1], i, j
    cdef double w
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] gx = out
    with nogil:
        for i in range(n):
            w = weights[i] * g[i]
            for j in range(m):
                gx[i, j] = probs[i, j] * w
            gx[i, targets[i]] -= w
    return out

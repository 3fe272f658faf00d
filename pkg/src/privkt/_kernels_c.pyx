# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Mirrors ``_kernels_py`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, lgamma, sqrt
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef enum:
    ACT_IDENTITY = 0
    ACT_RELU = 1
    ACT_SIGMOID = 2


cdef inline void _gemm_rm(char *ta, char *tb, int m, int n, int k,
                          double *a, int lda, double *b, int ldb,
                          double beta, double *c, int ldc) noexcept nogil:
    # Row-major C (m x n) = op(A) op(B); computed as column-major C^T = op(B)^T op(A)^T.
    cdef double one = 1.0
    dgemm(tb, ta, &n, &m, &k, &one, b, &ldb, a, &lda, &beta, c, &ldc)


def dense_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b, int act):
    cdef int nb = x.shape[0], din = x.shape[1], dout = w.shape[1]
    if w.shape[0] != din or b.shape[0] != dout:
        raise ValueError("dense_forward: shape mismatch")
    out_arr = np.empty((nb, dout), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef int i, j
    cdef double z
    if nb == 0 or dout == 0:
        return out_arr
    for i in range(nb):
        for j in range(dout):
            out[i, j] = b[j]
    if din > 0:
        _gemm_rm(b"N", b"N", nb, dout, din, &x[0, 0], din, &w[0, 0], dout,
                 1.0, &out[0, 0], dout)
    if act == ACT_RELU:
        for i in range(nb):
            for j in range(dout):
                if out[i, j] < 0.0:
                    out[i, j] = 0.0
    elif act == ACT_SIGMOID:
        for i in range(nb):
            for j in range(dout):
                z = out[i, j]
                if z >= 0.0:
                    out[i, j] = 1.0 / (1.0 + exp(-z))
                else:
                    z = exp(z)
                    out[i, j] = z / (1.0 + z)
    return out_arr


def dense_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] out,
                   double[:, ::1] gout, int act):
    cdef int nb = x.shape[0], din = x.shape[1], dout = w.shape[1]
    gz_arr = np.empty((nb, dout), dtype=np.float64)
    dx_arr = np.zeros((nb, din), dtype=np.float64)
    dw_arr = np.zeros((din, dout), dtype=np.float64)
    db_arr = np.zeros(dout, dtype=np.float64)
    cdef double[:, ::1] gz = gz_arr, dx = dx_arr, dw = dw_arr
    cdef double[::1] db = db_arr
    cdef int i, j
    cdef double o
    for i in range(nb):
        for j in range(dout):
            if act == ACT_RELU:
                gz[i, j] = gout[i, j] if out[i, j] > 0.0 else 0.0
            elif act == ACT_SIGMOID:
                o = out[i, j]
                gz[i, j] = gout[i, j] * o * (1.0 - o)
            else:
                gz[i, j] = gout[i, j]
            db[j] += gz[i, j]
    if nb > 0 and din > 0 and dout > 0:
        # dx = gz @ w.T ; dw = x.T @ gz
        _gemm_rm(b"N", b"T", nb, din, dout, &gz[0, 0], dout, &w[0, 0], dout,
                 0.0, &dx[0, 0], din)
        _gemm_rm(b"T", b"N", din, dout, nb, &x[0, 0], din, &gz[0, 0], dout,
                 0.0, &dw[0, 0], dout)
    return dx_arr, dw_arr, db_arr


def softmax_rows(double[:, ::1] z):
    cdef int n = z.shape[0], m = z.shape[1], i, j
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double top, s
    for i in range(n):
        top = z[i, 0]
        for j in range(1, m):
            if z[i, j] > top:
                top = z[i, j]
        s = 0.0
        for j in range(m):
            out[i, j] = exp(z[i, j] - top)
            s += out[i, j]
        for j in range(m):
            out[i, j] /= s
    return out_arr


def clip_rows(double[:, ::1] v, double c):
    cdef int n = v.shape[0], m = v.shape[1], i, j
    out_arr = np.empty((n, m), dtype=np.float64)
    scales_arr = np.ones(n, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[::1] scales = scales_arr
    cdef double s, norm
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += v[i, j] * v[i, j]
        norm = sqrt(s)
        if norm > c:
            scales[i] = c / norm
        for j in range(m):
            out[i, j] = v[i, j] * scales[i]
    return out_arr, scales_arr


def log_a_int(double q, double sigma, int alpha):
    cdef double log_q = log(q), log_1mq = log1p(-q)
    cdef double lg_a = lgamma(alpha + 1.0), denom = 2.0 * sigma * sigma
    cdef double top = -1e308, t, s = 0.0
    cdef int k
    terms_arr = np.empty(alpha + 1, dtype=np.float64)
    cdef double[::1] terms = terms_arr
    for k in range(alpha + 1):
        t = (lg_a - lgamma(k + 1.0) - lgamma(alpha - k + 1.0)
             + k * log_q + (alpha - k) * log_1mq + (<double>k * k - k) / denom)
        terms[k] = t
        if t > top:
            top = t
    for k in range(alpha + 1):
        s += exp(terms[k] - top)
    return top + log(s)

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the decode hot path.

Same contracts as ``ilmfuse.kernels.reference``.  Matrix-vector products
go through the same BLAS sgemv numpy uses, so float32 pre-activations
match the reference bitwise; reductions and nonlinearities run in C with
float64 accumulators and agree to within a few ulps.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh
from scipy.linalg.cython_blas cimport sgemv

cnp.import_array()

BACKEND_NAME = "fast"


cdef inline double _sigmoid(double z) nogil:
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    cdef double e = exp(z)
    return e / (1.0 + e)


cdef inline void _matvec(
    const cnp.float32_t[:, ::1] w, const cnp.float32_t[::1] x, cnp.float32_t[::1] out
) noexcept nogil:
    # out = w @ x; a C-contiguous (rows, cols) matrix is the transpose of
    # the Fortran-order matrix BLAS sees, hence trans='T'
    cdef int m = <int>w.shape[1]
    cdef int n = <int>w.shape[0]
    cdef int inc = 1
    cdef float alpha = 1.0
    cdef float beta = 0.0
    cdef const float* a = &w[0, 0]
    cdef const float* xp = &x[0]
    sgemv("T", &m, &n, &alpha, <float*>a, &m, <float*>xp, &inc, &beta, &out[0], &inc)


def affine(const cnp.float32_t[:, ::1] w, const cnp.float32_t[::1] x, const cnp.float32_t[::1] b):
    cdef Py_ssize_t rows = w.shape[0]
    cdef Py_ssize_t cols = w.shape[1]
    out_arr = np.empty(rows, dtype=np.float32)
    cdef cnp.float32_t[::1] out = out_arr
    cdef Py_ssize_t r
    if rows == 0:
        return out_arr
    if cols == 0:
        for r in range(rows):
            out[r] = b[r]
        return out_arr
    _matvec(w, x, out)
    for r in range(rows):
        out[r] = out[r] + b[r]
    return out_arr


def softmax(const cnp.float32_t[::1] logits):
    cdef Py_ssize_t n = logits.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double m = logits[0]
    cdef double s = 0.0
    for i in range(1, n):
        if logits[i] > m:
            m = logits[i]
    for i in range(n):
        out[i] = exp(<double>logits[i] - m)
        s += out[i]
    for i in range(n):
        out[i] /= s
    return out_arr


def log_softmax(const cnp.float32_t[::1] logits):
    cdef Py_ssize_t n = logits.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double m = logits[0]
    cdef double s = 0.0
    for i in range(1, n):
        if logits[i] > m:
            m = logits[i]
    for i in range(n):
        out[i] = <double>logits[i] - m
        s += exp(out[i])
    s = log(s)
    for i in range(n):
        out[i] -= s
    return out_arr


def log_sum_exp(const cnp.float64_t[::1] values):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t i
    cdef double m = values[0]
    cdef double s = 0.0
    for i in range(1, n):
        if values[i] > m:
            m = values[i]
    if m == -float("inf"):
        return m
    for i in range(n):
        s += exp(values[i] - m)
    return m + log(s)


def lstm_cell(
    const cnp.float32_t[::1] x,
    const cnp.float32_t[::1] h,
    const cnp.float32_t[::1] c,
    const cnp.float32_t[:, ::1] w_x,
    const cnp.float32_t[:, ::1] w_h,
    const cnp.float32_t[::1] b,
):
    cdef Py_ssize_t n = h.shape[0]
    h_arr = np.empty(n, dtype=np.float32)
    c_arr = np.empty(n, dtype=np.float32)
    gx_arr = np.empty(4 * n, dtype=np.float32)
    gh_arr = np.empty(4 * n, dtype=np.float32)
    cdef cnp.float32_t[::1] h_out = h_arr
    cdef cnp.float32_t[::1] c_out = c_arr
    cdef cnp.float32_t[::1] gx = gx_arr
    cdef cnp.float32_t[::1] gh = gh_arr
    cdef Py_ssize_t r
    cdef float pre
    cdef double gi, gf, gg, go, cn
    _matvec(w_x, x, gx)
    _matvec(w_h, h, gh)
    for r in range(n):
        # float32 rounding per add, matching the reference's numpy chain
        pre = (gx[r] + gh[r]) + b[r]
        gi = <double>pre
        pre = (gx[n + r] + gh[n + r]) + b[n + r]
        gf = <double>pre
        pre = (gx[2 * n + r] + gh[2 * n + r]) + b[2 * n + r]
        gg = <double>pre
        pre = (gx[3 * n + r] + gh[3 * n + r]) + b[3 * n + r]
        go = <double>pre

        cn = _sigmoid(gf) * <double>c[r] + _sigmoid(gi) * tanh(gg)
        c_out[r] = <cnp.float32_t>cn
        h_out[r] = <cnp.float32_t>(_sigmoid(go) * tanh(<double>c_out[r]))
    return h_arr, c_arr


def layer_norm(
    const cnp.float32_t[::1] x,
    const cnp.float32_t[::1] gamma,
    const cnp.float32_t[::1] beta,
    double eps,
):
    cdef Py_ssize_t n = x.shape[0]
    out_arr = np.empty(n, dtype=np.float32)
    cdef cnp.float32_t[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double mu = 0.0
    cdef double var = 0.0
    cdef double dev
    for i in range(n):
        mu += <double>x[i]
    mu /= n
    for i in range(n):
        dev = <double>x[i] - mu
        var += dev * dev
    var /= n
    dev = sqrt(var + eps)
    for i in range(n):
        out[i] = <cnp.float32_t>(((<double>x[i] - mu) / dev) * <double>gamma[i] + <double>beta[i])
    return out_arr

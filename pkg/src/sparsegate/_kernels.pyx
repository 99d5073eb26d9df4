# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Straightforward single-threaded loops with float64 accumulation and
float32 storage. `sparsegate._kernels_py` implements the same API in
pure numpy; `sparsegate.backend` picks whichever is available at import.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

COMPILED = True


def dense_matmul(const float[:, ::1] a, const float[:, ::1] b):
    """C[m,p] = A[m,n] @ B[n,p] as an explicit loop, f64 accumulation."""
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], p = b.shape[1]
    out = np.empty((m, p), dtype=np.float32)
    cdef float[:, ::1] c = out
    acc_arr = np.zeros(p, dtype=np.float64)
    cdef double[::1] acc = acc_arr
    cdef Py_ssize_t i, j, k
    cdef double aik
    for i in range(m):
        for j in range(p):
            acc[j] = 0.0
        for k in range(n):
            aik = a[i, k]
            for j in range(p):
                acc[j] += aik * b[k, j]
        for j in range(p):
            c[i, j] = <float> acc[j]
    return out


def csr_matvec(const long long[::1] row_ptr, const int[::1] col_idx,
               const float[::1] values, const float[::1] x):
    """y = A @ x for CSR A; touches only the stored entries."""
    cdef Py_ssize_t rows = row_ptr.shape[0] - 1
    out = np.empty(rows, dtype=np.float32)
    cdef float[::1] y = out
    cdef Py_ssize_t i, t
    cdef double acc
    for i in range(rows):
        acc = 0.0
        for t in range(row_ptr[i], row_ptr[i + 1]):
            acc += values[t] * x[col_idx[t]]
        y[i] = <float> acc
    return out


def csr_matmat(const long long[::1] row_ptr, const int[::1] col_idx,
               const float[::1] values, const float[:, ::1] x):
    """Y[m,p] = A @ X[n,p] for CSR A; touches only the stored entries."""
    cdef Py_ssize_t rows = row_ptr.shape[0] - 1, p = x.shape[1]
    out = np.empty((rows, p), dtype=np.float32)
    cdef float[:, ::1] y = out
    acc_arr = np.zeros(p, dtype=np.float64)
    cdef double[::1] acc = acc_arr
    cdef Py_ssize_t i, j, t, col
    cdef double v
    for i in range(rows):
        for j in range(p):
            acc[j] = 0.0
        for t in range(row_ptr[i], row_ptr[i + 1]):
            v = values[t]
            col = col_idx[t]
            for j in range(p):
                acc[j] += v * x[col, j]
        for j in range(p):
            y[i, j] = <float> acc[j]
    return out


def maxpool2_fwd(const float[:, :, :, ::1] x):
    """2x2/stride-2 max pooling; returns (pooled, argmax in {0..3}).

    Ties keep the first window position in row-major order, matching the
    numpy fallback (argmax semantics).
    """
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = x.shape[2] // 2, wo = x.shape[3] // 2
    out = np.empty((n, c, ho, wo), dtype=np.float32)
    idx = np.empty((n, c, ho, wo), dtype=np.uint8)
    cdef float[:, :, :, ::1] y = out
    cdef unsigned char[:, :, :, ::1] ix = idx
    cdef Py_ssize_t b, ch, i, j, di, dj
    cdef float best, v
    cdef unsigned char arg
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = x[b, ch, 2 * i, 2 * j]
                    arg = 0
                    for di in range(2):
                        for dj in range(2):
                            v = x[b, ch, 2 * i + di, 2 * j + dj]
                            if v > best:
                                best = v
                                arg = <unsigned char> (2 * di + dj)
                    y[b, ch, i, j] = best
                    ix[b, ch, i, j] = arg
    return out, idx


def maxpool2_bwd(const float[:, :, :, ::1] dy,
                 const unsigned char[:, :, :, ::1] idx,
                 Py_ssize_t h, Py_ssize_t w):
    """Scatter upstream gradient to the recorded argmax positions."""
    cdef Py_ssize_t n = dy.shape[0], c = dy.shape[1]
    cdef Py_ssize_t ho = dy.shape[2], wo = dy.shape[3]
    out = np.zeros((n, c, h, w), dtype=np.float32)
    cdef float[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, ch, i, j
    cdef unsigned char a
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    a = idx[b, ch, i, j]
                    dx[b, ch, 2 * i + (a >> 1), 2 * j + (a & 1)] += dy[b, ch, i, j]
    return out

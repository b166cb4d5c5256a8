# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: 3x3 convolution, group normalization, row softmax.

Convolution accumulates in float32 through BLAS sgemm; normalization and
softmax accumulate in double and round to float32 once.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt
from scipy.linalg.cython_blas cimport sgemm

cnp.import_array()


def conv2d_3x3_batch(const float[:, :, :, ::1] x, const float[:, :, :, ::1] weight, const float[::1] bias):
    """im2col in C, then one sgemm per frame: out(c_out, hw) = W(c_out, 9 c_in) @ cols."""
    cdef Py_ssize_t b = x.shape[0], c_in = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t c_out = weight.shape[0]
    cdef Py_ssize_t n, co, ci, i, j, dy, dx, yy, xx, row
    cdef int m = <int>(h * w), k = <int>(c_in * 9), nn = <int>c_out
    cdef float alpha = 1.0, beta = 0.0
    cdef float[:, ::1] cols = np.empty((c_in * 9, h * w), dtype=np.float32)
    # sgemm takes non-const pointers; weights are often read-only
    cdef float[:, ::1] wmat = np.array(weight, dtype=np.float32).reshape(c_out, c_in * 9)
    out = np.empty((b, c_out, h, w), dtype=np.float32)
    cdef float[:, :, :, ::1] o = out
    with nogil:
        for n in range(b):
            for ci in range(c_in):
                for dy in range(3):
                    for dx in range(3):
                        row = ci * 9 + dy * 3 + dx
                        for i in range(h):
                            yy = i + dy - 1
                            for j in range(w):
                                xx = j + dx - 1
                                if yy < 0 or yy >= h or xx < 0 or xx >= w:
                                    cols[row, i * w + j] = 0.0
                                else:
                                    cols[row, i * w + j] = x[n, ci, yy, xx]
            # row-major C(c_out, hw) == column-major C^T(hw, c_out) = cols^T @ W^T
            sgemm("N", "N", &m, &nn, &k, &alpha, &cols[0, 0], &m, &wmat[0, 0], &k,
                  &beta, &o[n, 0, 0, 0], &m)
            for co in range(c_out):
                for i in range(h):
                    for j in range(w):
                        o[n, co, i, j] += bias[co]
    return out


def group_norm_batch(const float[:, :, :, ::1] x, int groups, const float[::1] gamma, const float[::1] beta, double eps):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t cpg = c // groups
    cdef Py_ssize_t count = cpg * h * w
    cdef Py_ssize_t n, g, ch, i, j
    cdef double mean, var, d, inv
    out = np.empty((b, c, h, w), dtype=np.float32)
    cdef float[:, :, :, ::1] o = out
    with nogil:
        for n in range(b):
            for g in range(groups):
                mean = 0.0
                for ch in range(g * cpg, (g + 1) * cpg):
                    for i in range(h):
                        for j in range(w):
                            mean = mean + x[n, ch, i, j]
                mean = mean / count
                var = 0.0
                for ch in range(g * cpg, (g + 1) * cpg):
                    for i in range(h):
                        for j in range(w):
                            d = x[n, ch, i, j] - mean
                            var = var + d * d
                var = var / count
                inv = 1.0 / sqrt(var + eps)
                for ch in range(g * cpg, (g + 1) * cpg):
                    for i in range(h):
                        for j in range(w):
                            o[n, ch, i, j] = <float>((x[n, ch, i, j] - mean) * inv * gamma[ch] + beta[ch])
    return out


def softmax_rows(const float[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0], cols = x.shape[1]
    cdef Py_ssize_t r, k
    cdef double m, s
    out = np.empty((rows, cols), dtype=np.float32)
    cdef float[:, ::1] o = out
    cdef double[::1] buf = np.empty(cols, dtype=np.float64)
    with nogil:
        for r in range(rows):
            m = x[r, 0]
            for k in range(1, cols):
                if x[r, k] > m:
                    m = x[r, k]
            s = 0.0
            for k in range(cols):
                buf[k] = exp(x[r, k] - m)
                s = s + buf[k]
            for k in range(cols):
                o[r, k] = <float>(buf[k] / s)
    return out

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled layer-norm and LCS kernels.

Signatures mirror ``_pykernels``; inputs are float64 C-contiguous 2-D arrays.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def layer_norm_forward(const double[:, ::1] x, const double[::1] gain,
                       const double[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], i, k
    y_arr = np.empty((n, h), dtype=np.float64)
    xhat_arr = np.empty((n, h), dtype=np.float64)
    rstd_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    cdef double mean, var, d, r
    with nogil:
        for i in range(n):
            mean = 0.0
            for k in range(h):
                mean += x[i, k]
            mean /= h
            var = 0.0
            for k in range(h):
                d = x[i, k] - mean
                var += d * d
            var /= h
            r = 1.0 / sqrt(var + eps)
            rstd[i] = r
            for k in range(h):
                d = (x[i, k] - mean) * r
                xhat[i, k] = d
                y[i, k] = d * gain[k] + bias[k]
    return y_arr, xhat_arr, rstd_arr


def layer_norm_backward(const double[:, ::1] dy, const double[:, ::1] xhat,
                        const double[::1] rstd, const double[::1] gain):
    cdef Py_ssize_t n = dy.shape[0], h = dy.shape[1], i, k
    dx_arr = np.empty((n, h), dtype=np.float64)
    dgain_arr = np.zeros(h, dtype=np.float64)
    dbias_arr = np.zeros(h, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_arr
    cdef double[::1] dbias = dbias_arr
    cdef double sg, sgx, g
    with nogil:
        for i in range(n):
            sg = 0.0
            sgx = 0.0
            for k in range(h):
                g = dy[i, k] * gain[k]
                sg += g
                sgx += g * xhat[i, k]
                dgain[k] += dy[i, k] * xhat[i, k]
                dbias[k] += dy[i, k]
            sg /= h
            sgx /= h
            for k in range(h):
                dx[i, k] = (dy[i, k] * gain[k] - sg - xhat[i, k] * sgx) * rstd[i]
    return dx_arr, dgain_arr, dbias_arr


def lcs_length(a, b):
    cdef long[::1] s = np.ascontiguousarray(a, dtype=np.int_)
    cdef long[::1] t = np.ascontiguousarray(b, dtype=np.int_)
    if s.shape[0] < t.shape[0]:
        s, t = t, s
    cdef Py_ssize_t m = t.shape[0], i, j
    if m == 0:
        return 0
    cdef long[::1] prev = np.zeros(m + 1, dtype=np.int_)
    cdef long[::1] cur = np.zeros(m + 1, dtype=np.int_)
    cdef long[::1] tmp
    for i in range(s.shape[0]):
        for j in range(m):
            if s[i] == t[j]:
                cur[j + 1] = prev[j] + 1
            elif prev[j + 1] >= cur[j]:
                cur[j + 1] = prev[j + 1]
            else:
                cur[j + 1] = cur[j]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])

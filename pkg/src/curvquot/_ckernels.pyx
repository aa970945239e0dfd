# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched kernels; same contract as ``curvquot._pykernels``."""

import numpy as np

from libc.stdlib cimport malloc, free


cdef inline void _esp_skip(const double* lam, Py_ssize_t n, Py_ssize_t skip_a,
                           Py_ssize_t skip_b, double* e) noexcept nogil:
    # expand prod (1 + lam_i t) over i not in {skip_a, skip_b}; e has n + 1 slots
    cdef Py_ssize_t i, j, m = 0
    e[0] = 1.0
    for j in range(1, n + 1):
        e[j] = 0.0
    for i in range(n):
        if i == skip_a or i == skip_b:
            continue
        m += 1
        for j in range(m, 0, -1):
            e[j] += lam[i] * e[j - 1]


def esp_table(lam_in):
    cdef double[:, ::1] lam = np.ascontiguousarray(lam_in, dtype=np.float64)
    cdef Py_ssize_t N = lam.shape[0], n = lam.shape[1], r
    out = np.empty((N, n + 1))
    cdef double[:, ::1] o = out
    with nogil:
        for r in range(N):
            _esp_skip(&lam[r, 0], n, -1, -1, &o[r, 0])
    return out


def esp_deleted(lam_in):
    cdef double[:, ::1] lam = np.ascontiguousarray(lam_in, dtype=np.float64)
    cdef Py_ssize_t N = lam.shape[0], n = lam.shape[1], r, i, j
    out = np.empty((N, n, n))
    cdef double[:, :, ::1] o = out
    cdef double* buf = <double*> malloc((n + 1) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(N):
                for i in range(n):
                    _esp_skip(&lam[r, 0], n, i, -1, buf)
                    for j in range(n):
                        o[r, i, j] = buf[j]
    finally:
        free(buf)
    return out


def esp_deleted2(lam_in):
    cdef double[:, ::1] lam = np.ascontiguousarray(lam_in, dtype=np.float64)
    cdef Py_ssize_t N = lam.shape[0], n = lam.shape[1], r, i, j, l
    out = np.zeros((N, n, n, n - 1))
    cdef double[:, :, :, ::1] o = out
    cdef double* buf = <double*> malloc((n + 1) * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(N):
                for i in range(n):
                    for j in range(i + 1, n):
                        _esp_skip(&lam[r, 0], n, i, j, buf)
                        for l in range(n - 1):
                            o[r, i, j, l] = buf[l]
                            o[r, j, i, l] = buf[l]
    finally:
        free(buf)
    return out


def quotient_jet(lam_in, int k):
    cdef double[:, ::1] lam = np.ascontiguousarray(lam_in, dtype=np.float64)
    cdef Py_ssize_t N = lam.shape[0], n = lam.shape[1], r, p, q
    value = np.empty(N)
    grad = np.empty((N, n))
    hess_diag = np.empty((N, n, n))
    hess_off = np.zeros((N, n, n))
    cdef double[::1] v = value
    cdef double[:, ::1] g = grad
    cdef double[:, :, ::1] hd = hess_diag
    cdef double[:, :, ::1] ho = hess_off
    cdef double* e = <double*> malloc((n + 1) * sizeof(double))
    cdef double* a1 = <double*> malloc(n * sizeof(double))
    cdef double* b1 = <double*> malloc(n * sizeof(double))
    cdef double* c1 = <double*> malloc(n * sizeof(double))
    cdef double sn, sk, inv, a2, b2, c2, e2, nan = float("nan")
    if e == NULL or a1 == NULL or b1 == NULL or c1 == NULL:
        free(e); free(a1); free(b1); free(c1)
        raise MemoryError()
    try:
        with nogil:
            for r in range(N):
                _esp_skip(&lam[r, 0], n, -1, -1, e)
                sn = e[n]
                sk = e[k]
                inv = 1.0 / sk if sk != 0.0 else nan
                for p in range(n):
                    _esp_skip(&lam[r, 0], n, p, -1, e)
                    a1[p] = e[n - 1]
                    b1[p] = e[k - 1] if k >= 1 else 0.0
                    c1[p] = e[k]
                v[r] = sn * inv
                # cancellation-free forms, see the pure-Python kernel
                for p in range(n):
                    g[r, p] = a1[p] * c1[p] * inv * inv
                    hd[r, p, p] = -2.0 * a1[p] * b1[p] * c1[p] * inv * inv * inv
                for p in range(n):
                    for q in range(p + 1, n):
                        _esp_skip(&lam[r, 0], n, p, q, e)
                        a2 = e[n - 2]
                        b2 = e[k - 2] if k >= 2 else 0.0
                        c2 = e[k]
                        e2 = e[k - 1] if k >= 1 else 0.0
                        hd[r, p, q] = a2 * (c2 * c2 + (lam[r, p] + lam[r, q]) * c2 * e2
                                            + lam[r, p] * lam[r, q] * (2.0 * e2 * e2 - c2 * b2)) * inv * inv * inv
                        hd[r, q, p] = hd[r, p, q]
                        ho[r, p, q] = -a2 * (c2 + (lam[r, p] + lam[r, q]) * e2) * inv * inv
                        ho[r, q, p] = ho[r, p, q]
    finally:
        free(e); free(a1); free(b1); free(c1)
    return value, grad, hess_diag, hess_off

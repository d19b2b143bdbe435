# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled CSR gather-sum kernels.

Edges are stored grouped by destination (CSR over incoming edges). Each row
is accumulated in stored edge order, matching the fallback implementation.
"""

import numpy as np

cimport numpy as cnp
from numpy cimport int64_t

cnp.import_array()


def gather_sum(const int64_t[::1] indptr, const int64_t[::1] src,
               const double[::1] w, const double[:, ::1] h):
    """out[v] = sum_e w[e] * h[src[e]] over edges e whose destination is v."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = h.shape[1]
    cdef Py_ssize_t v, e, k, u
    cdef double c
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for v in range(n):
            for e in range(indptr[v], indptr[v + 1]):
                u = src[e]
                c = w[e]
                for k in range(d):
                    o[v, k] += c * h[u, k]
    return out


def gather_sum_backward(const int64_t[::1] indptr, const int64_t[::1] src,
                        const double[::1] w, const double[:, ::1] h,
                        const double[:, ::1] g, bint need_w):
    """Gradients of gather_sum with respect to h and w."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t nh = h.shape[0]
    cdef Py_ssize_t d = h.shape[1]
    cdef Py_ssize_t nnz = src.shape[0]
    cdef Py_ssize_t v, e, k, u
    cdef double c, acc
    dh = np.zeros((nh, d), dtype=np.float64)
    dw = np.zeros(nnz if need_w else 0, dtype=np.float64)
    cdef double[:, ::1] dho = dh
    cdef double[::1] dwo = dw
    with nogil:
        for v in range(n):
            for e in range(indptr[v], indptr[v + 1]):
                u = src[e]
                c = w[e]
                acc = 0.0
                for k in range(d):
                    dho[u, k] += c * g[v, k]
                    acc = acc + g[v, k] * h[u, k]
                if need_w:
                    dwo[e] = acc
    return dh, dw

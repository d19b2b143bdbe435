"""Pure numpy/scipy implementation of the CSR gather-sum kernels."""

import numpy as np
import scipy.sparse as sp


def _matrix(indptr, src, w, ncols):
    n = len(indptr) - 1
    return sp.csr_matrix((w, src, indptr), shape=(n, ncols))


def gather_sum(indptr, src, w, h):
    """out[v] = sum_e w[e] * h[src[e]] over edges e whose destination is v."""
    out = _matrix(indptr, src, w, h.shape[0]) @ h
    return np.ascontiguousarray(out, dtype=np.float64)


def gather_sum_backward(indptr, src, w, h, g, need_w):
    """Gradients of gather_sum with respect to h and w."""
    a = _matrix(indptr, src, w, h.shape[0])
    dh = np.ascontiguousarray(a.T @ g, dtype=np.float64)
    if need_w:
        dst = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
        dw = np.einsum("ij,ij->i", g[dst], h[src])
    else:
        dw = np.zeros(0)
    return dh, dw

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: sparse projection and triangular solves."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def sparse_project(const cnp.int64_t[::1] indptr,
                   const cnp.int64_t[::1] indices,
                   const cnp.int8_t[::1] signs,
                   double scale,
                   X):
    """Return ``X @ P.T`` for a row-sparse sign matrix ``P`` (B x d result).

    Works on the transposed block so the innermost loop is a contiguous
    add/subtract of one source row across the whole batch.
    """
    cdef const double[:, ::1] XT = np.ascontiguousarray(np.asarray(X, dtype=np.float64).T)
    cdef Py_ssize_t B = XT.shape[1]
    cdef Py_ssize_t d = indptr.shape[0] - 1
    cdef Py_ssize_t b, r, p, col
    out_t = np.zeros((d, B), dtype=np.float64)
    cdef double[:, ::1] O = out_t
    with nogil:
        for r in range(d):
            for p in range(indptr[r], indptr[r + 1]):
                col = indices[p]
                if signs[p] > 0:
                    for b in range(B):
                        O[r, b] += XT[col, b]
                else:
                    for b in range(B):
                        O[r, b] -= XT[col, b]
            for b in range(B):
                O[r, b] *= scale
    return out_t.T


def solve_lower(const double[:, ::1] L, const double[::1] rhs, Py_ssize_t m):
    """Forward substitution on the leading ``m x m`` block of ``L``."""
    cdef Py_ssize_t i, j
    cdef double acc
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] x = out
    with nogil:
        for i in range(m):
            acc = rhs[i]
            for j in range(i):
                acc = acc - L[i, j] * x[j]
            x[i] = acc / L[i, i]
    return out


def solve_lower_t(const double[:, ::1] L, const double[::1] rhs, Py_ssize_t m):
    """Solve ``L[:m, :m].T x = rhs`` by back substitution."""
    cdef Py_ssize_t i, j
    cdef double acc
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] x = out
    with nogil:
        for i in range(m - 1, -1, -1):
            acc = rhs[i]
            for j in range(i + 1, m):
                acc = acc - L[j, i] * x[j]
            x[i] = acc / L[i, i]
    return out

"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Results agree with the compiled path up to floating point summation order.
"""

import numpy as np

# Upper bound on gathered entries materialized at once by sparse_project.
_GATHER_BUDGET = 1 << 22


def sparse_project(indptr, indices, signs, scale, X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    B = X.shape[0]
    d = len(indptr) - 1
    out = np.zeros((B, d))
    nnz = len(indices)
    if nnz == 0 or B == 0:
        return out
    starts = np.asarray(indptr[:-1])
    nonempty = np.diff(indptr) > 0
    signed = signs.astype(np.float64)
    step = max(1, _GATHER_BUDGET // nnz)
    for lo in range(0, B, step):
        gathered = X[lo:lo + step][:, indices] * signed
        # reduceat returns the element at an empty segment's start; mask those rows.
        sums = np.add.reduceat(gathered, np.minimum(starts, nnz - 1), axis=1)
        out[lo:lo + step] = np.where(nonempty, sums, 0.0)
    return out * scale


def solve_lower(L, rhs, m):
    x = np.empty(m)
    for i in range(m):
        x[i] = (rhs[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


def solve_lower_t(L, rhs, m):
    x = np.empty(m)
    for i in range(m - 1, -1, -1):
        x[i] = (rhs[i] - L[i + 1:m, i] @ x[i + 1:m]) / L[i, i]
    return x

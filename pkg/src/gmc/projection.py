"""Sparse random sign projections that preserve inner products in expectation.

Each entry of the d x D matrix is ``+s`` or ``-s`` with probability
``density/2`` each and zero otherwise, where ``s = (density * d) ** -0.5``,
so that ``E[P.T @ P] = I``.  The matrix is stored row-sparse (one row per
output coordinate) so projecting is a gather-multiply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend


@dataclass(frozen=True, eq=False)
class SparseProjection:
    D: int
    d: int
    density: float
    seed: int
    indptr: np.ndarray  # int64, length d + 1
    indices: np.ndarray  # int64 column index per nonzero
    signs: np.ndarray  # int8, +1 or -1 per nonzero
    identity: bool = False

    @property
    def scale(self) -> float:
        """Magnitude of every stored nonzero."""
        return 1.0 if self.identity else (self.density * self.d) ** -0.5

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def row(self, r: int) -> tuple[np.ndarray, np.ndarray]:
        """(column indices, signed values) of output coordinate ``r``."""
        sl = slice(self.indptr[r], self.indptr[r + 1])
        return self.indices[sl], self.signs[sl] * self.scale

    def to_dense(self) -> np.ndarray:
        P = np.zeros((self.d, self.D))
        rows = np.repeat(np.arange(self.d), np.diff(self.indptr))
        P[rows, self.indices] = self.signs * self.scale
        return P


def default_density(D: int) -> float:
    return 1.0 / np.sqrt(D)


def make_projection(D: int, d: int, density: float | None = None, seed: int = 0) -> SparseProjection:
    """Sample a sparse projection from R^D to R^d; ``density`` defaults to 1/sqrt(D).

    Row r is drawn by sampling its nonzero count from Binomial(D, density),
    then the positions uniformly without replacement and fair signs, which
    gives the same law as sampling every entry independently.
    """
    if D < 1 or d < 1:
        raise ValueError("projection dimensions must be positive")
    if density is None:
        density = default_density(D)
    if not (0.0 < density <= 1.0):
        raise ValueError(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    counts = rng.binomial(D, density, size=d)
    indptr = np.zeros(d + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int64)
    for r in range(d):
        if counts[r] == D:
            cols = np.arange(D)
        else:
            cols = np.sort(rng.choice(D, size=counts[r], replace=False))
        indices[indptr[r]:indptr[r + 1]] = cols
    signs = np.where(rng.random(len(indices)) < 0.5, -1, 1).astype(np.int8)
    return SparseProjection(D, d, float(density), int(seed), indptr, indices, signs)


def identity_projection(D: int) -> SparseProjection:
    """P = I (d = D); lets tests compare embeddings against raw gradients."""
    indptr = np.arange(D + 1, dtype=np.int64)
    indices = np.arange(D, dtype=np.int64)
    signs = np.ones(D, dtype=np.int8)
    return SparseProjection(D, D, 1.0, 0, indptr, indices, signs, identity=True)


def project(P: SparseProjection, v: np.ndarray) -> np.ndarray:
    """Apply ``P`` to a length-D vector, or to every row of an (B x D) matrix."""
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    X = np.ascontiguousarray(v.reshape(1, -1) if single else v)
    if X.shape[1] != P.D:
        raise ValueError(f"expected vectors of length {P.D}, got {X.shape[1]}")
    if P.identity:
        out = X.copy()
    else:
        out = _backend.sparse_project(P.indptr, P.indices, P.signs, P.scale, X)
    return out[0] if single else out

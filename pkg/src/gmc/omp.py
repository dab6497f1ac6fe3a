"""Regularized orthogonal matching pursuit with an incrementally grown Cholesky factor.

The weights of the selected columns minimize

    ||G_I w - g||^2 + lam * ||w - u * 1||^2,

where ``u`` is the best single weight shared by all selected columns.
Shrinking toward that uniform solution (instead of toward zero) keeps the
weights positive and comparable in size.  The normal matrix
``G_I^T G_I + lam*I`` is factored once and extended by one row per greedy
step, so every step costs O(|I|^2) on top of the correlation update.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .embedding import EmbeddingMatrix, combine
from .errors import SingularSystemError


class DependentColumnError(SingularSystemError):
    """Appending the column would make the factor singular."""


@dataclass(frozen=True)
class OmpConfig:
    n: int
    lam: float = 0.5
    tie_break: str = "lowest_index"
    clip_negative: bool = True
    center: str = "uniform"  # "zero" gives plain ridge shrinkage (ablation only)
    stop_nonpositive: bool = True
    pivot_tol: float = 1e-10

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("coreset size n must be at least 1")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.tie_break != "lowest_index":
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")
        if self.center not in ("uniform", "zero"):
            raise ValueError(f"unknown regularization center {self.center!r}")


class CholState:
    """Lower-triangular L with L L^T = G_I^T G_I + lam*I for the selected set I."""

    def __init__(self, lam: float = 0.0, capacity: int = 16, pivot_tol: float = 1e-10):
        self.lam = float(lam)
        self.pivot_tol = pivot_tol
        self.indices: list[int] = []
        self._L = np.zeros((capacity, capacity))
        self.columns: list[np.ndarray] = []  # only filled by chol_append
        self.ops = 0  # multiply-adds spent in triangular solves

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def L(self) -> np.ndarray:
        m = len(self)
        return self._L[:m, :m].copy()

    def _grow(self):
        cap = self._L.shape[0]
        bigger = np.zeros((2 * cap, 2 * cap))
        bigger[:cap, :cap] = self._L
        self._L = bigger

    def solve_lower(self, rhs) -> np.ndarray:
        m = len(self)
        self.ops += m * m
        return _backend.solve_lower(self._L, np.ascontiguousarray(rhs, dtype=np.float64), m)

    def solve(self, rhs) -> np.ndarray:
        """(G_I^T G_I + lam*I)^{-1} rhs by two triangular solves."""
        m = len(self)
        y = self.solve_lower(rhs)
        self.ops += m * m
        return _backend.solve_lower_t(self._L, y, m)

    def append(self, index: int, cross, sqnorm: float) -> bool:
        """Extend the factor by a column with inner products ``cross`` (against I) and
        squared norm ``sqnorm``.  Returns False, leaving the state unchanged, if the
        new pivot is not safely positive.
        """
        m = len(self)
        w = self.solve_lower(cross) if m else np.empty(0)
        diag = sqnorm + self.lam
        pivot2 = diag - w @ w
        if not pivot2 > self.pivot_tol * max(diag, np.finfo(float).tiny):
            return False
        if m == self._L.shape[0]:
            self._grow()
        self._L[m, :m] = w
        self._L[m, m] = np.sqrt(pivot2)
        self.indices.append(int(index))
        return True


def chol_append(state: CholState, new_column, index: int | None = None) -> CholState:
    """Append an explicit column to a factor built from explicit columns.

    Raises DependentColumnError when the column is numerically dependent on
    the ones already present (at lam = 0) and leaves the state untouched.
    """
    col = np.asarray(new_column, dtype=np.float64)
    cross = np.array([c @ col for c in state.columns])
    idx = len(state) if index is None else index
    if not state.append(idx, cross, float(col @ col)):
        raise DependentColumnError(f"column {idx} is numerically dependent", column=idx)
    state.columns.append(col)
    return state


def best_uniform(G_I, g) -> float:
    """Scalar u minimizing ||G_I (u * 1) - g||; zero when G_I 1 vanishes."""
    s = np.asarray(G_I, dtype=np.float64).sum(axis=1)
    ss = s @ s
    return 0.0 if ss == 0 else float(s @ np.asarray(g, dtype=np.float64)) / ss


def solve_weights(G_I, g, lam: float, center: str = "uniform") -> np.ndarray:
    """Weights minimizing ||G_I w - g||^2 + lam ||w - u* 1||^2 for the given columns."""
    G_I = np.atleast_2d(np.asarray(G_I, dtype=np.float64))
    g = np.asarray(g, dtype=np.float64)
    if G_I.shape[1] == 0:
        raise ValueError("need at least one selected column")
    state = CholState(lam, capacity=G_I.shape[1])
    for j in range(G_I.shape[1]):
        try:
            chol_append(state, G_I[:, j], j)
        except DependentColumnError as exc:
            raise SingularSystemError(
                f"normal matrix is singular: column {j} depends on earlier columns", column=j
            ) from exc
    u = best_uniform(G_I, g) if center == "uniform" else 0.0
    return state.solve(G_I.T @ g + lam * u)


def clip_weights(weights) -> np.ndarray:
    return np.maximum(np.asarray(weights, dtype=np.float64), 0.0)


@dataclass
class OmpResult:
    indices: np.ndarray
    weights: np.ndarray  # clipped when the config asks for it
    raw_weights: np.ndarray
    residual_norm: float  # ||g - G_I weights|| with the returned weights
    residual_history: list[float] = field(default_factory=list)  # after each addition, unclipped
    n_clipped: int = 0
    skipped: list[int] = field(default_factory=list)  # numerically dependent columns
    stopped_early: bool = False
    ops: int = 0
    factor: np.ndarray | None = None


def _as_columns(G) -> np.ndarray:
    if isinstance(G, EmbeddingMatrix):
        return G.columns
    if isinstance(G, (list, tuple)) and G and isinstance(G[0], EmbeddingMatrix):
        return combine(*G).columns
    return np.atleast_2d(np.asarray(G, dtype=np.float64))


def omp_select(G, g, cfg: OmpConfig) -> OmpResult:
    """Greedily pick up to ``cfg.n`` columns of G whose weighted sum matches ``g``.

    ``G`` may be an array (dim x N), an EmbeddingMatrix, or a sequence of
    EmbeddingMatrix blocks that are combined after a provenance check.
    Inner products with the target and with each selected column are
    cached, so correlations are updated in O(N |I|) per step.
    """
    cols = _as_columns(G)
    g = np.asarray(g, dtype=np.float64)
    dim, N = cols.shape
    if g.shape != (dim,):
        raise ValueError(f"target has shape {g.shape}, expected ({dim},)")
    if cfg.n > N:
        raise ValueError(f"coreset size {cfg.n} exceeds dictionary size {N}")
    n, lam = cfg.n, cfg.lam

    b = cols.T @ g
    sqnorms = np.einsum("ij,ij->j", cols, cols)
    gram_cols = np.empty((N, n))
    selected = np.empty((n, dim))  # selected columns as contiguous rows
    state = CholState(lam, capacity=n, pivot_tol=cfg.pivot_tol)
    open_ = np.ones(N, dtype=bool)
    corr = b.copy()
    gamma = np.empty(0)
    history: list[float] = []
    skipped: list[int] = []
    stopped_early = False

    while len(state) < n:
        if not open_.any():
            break
        masked = np.where(open_, corr, -np.inf)
        k = int(np.argmax(masked))  # first maximum -> lowest index
        if cfg.stop_nonpositive and masked[k] <= 0:
            stopped_early = True
            break
        kcol = cols.T @ cols[:, k]
        I = state.indices
        if not state.append(k, kcol[I], sqnorms[k]):
            open_[k] = False
            skipped.append(k)
            continue
        m = len(state)
        gram_cols[:, m - 1] = kcol
        selected[m - 1] = cols[:, k]
        open_[k] = False
        I = np.asarray(state.indices)
        u = 0.0
        if cfg.center == "uniform" and lam > 0:
            ss = gram_cols[I, :m].sum()
            u = b[I].sum() / ss if ss > 0 else 0.0
        gamma = state.solve(b[I] + lam * u)
        corr = b - gram_cols[:, :m] @ gamma
        history.append(float(np.linalg.norm(g - gamma @ selected[:m])))

    indices = np.asarray(state.indices, dtype=np.int64)
    weights = clip_weights(gamma) if cfg.clip_negative else gamma.copy()
    resid = float(np.linalg.norm(g - weights @ selected[:len(indices)]))
    return OmpResult(
        indices=indices,
        weights=weights,
        raw_weights=gamma,
        residual_norm=resid,
        residual_history=history,
        n_clipped=int(np.sum(gamma < 0)) if cfg.clip_negative else 0,
        skipped=skipped,
        stopped_early=stopped_early,
        ops=state.ops,
        factor=state.L,
    )

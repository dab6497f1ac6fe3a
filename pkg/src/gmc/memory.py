"""Rehearsal memories that curate a bounded subset of a data stream.

Every strategy exposes ``update(batch, ...)`` and ``as_weighted_dataset()``.
The gradient-matching memories keep, next to the raw items, the embedding
columns of the current coreset and the exact running sum of the
embeddings of everything seen so far; each update re-runs OMP over the old
coreset plus the new batch against that running target.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .embedding import EmbeddingMatrix, combine, local_embeddings, sum_columns
from .model import ParamVector, WeightedDataset
from .omp import OmpConfig, omp_select

STRATEGY_IDS = {
    "reservoir": 0,
    "sliding_window": 1,
    "class_balance": 2,
    "gmc": 3,
    "gmc_last_layer": 4,
    "gmc_local": 5,
}
SNAPSHOT_MAGIC = b"GMCM"
SNAPSHOT_VERSION = 1
_SNAP_HEADER = struct.Struct("<4sHBQQI")


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(batch.features, dtype=np.float64)
    y = np.asarray(batch.labels, dtype=np.int64)
    return X.reshape(len(y), -1), y


class Memory:
    """Bounded store of (features, label, weight) rows."""

    strategy = "base"

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be nonnegative")
        self.capacity = int(capacity)
        self.features: np.ndarray | None = None
        self.labels = np.empty(0, dtype=np.int64)
        self.weights = np.empty(0)

    def __len__(self) -> int:
        return len(self.labels)

    def _ensure_width(self, F: int) -> None:
        if self.features is None:
            self.features = np.empty((0, F))
        elif self.features.shape[1] != F:
            raise ValueError(f"feature width changed from {self.features.shape[1]} to {F}")

    def as_weighted_dataset(self) -> WeightedDataset:
        """Retained rows with their weights; zero-weight rows are left out."""
        keep = self.weights > 0
        F = self.features.shape[1] if self.features is not None else 0
        X = self.features[keep] if self.features is not None else np.empty((0, F))
        return WeightedDataset(X, self.labels[keep], self.weights[keep])

    def class_counts(self, num_classes: int | None = None) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes or 0)


class ReservoirMemory(Memory):
    """Uniform random subsample of the stream (Vitter's algorithm R)."""

    strategy = "reservoir"

    def __init__(self, capacity: int, seed: int = 0):
        super().__init__(capacity)
        self.rng = np.random.default_rng(seed)
        self.seen = 0

    def update(self, batch) -> "ReservoirMemory":
        X, y = _batch_arrays(batch)
        self._ensure_width(X.shape[1])
        n = self.capacity
        feats = list(self.features)
        labels = list(self.labels)
        for x, c in zip(X, y):
            self.seen += 1
            if len(labels) < n:
                feats.append(x)
                labels.append(c)
            elif n > 0:
                j = self.rng.integers(self.seen)
                if j < n:
                    feats[j] = x
                    labels[j] = c
        self.features = np.array(feats).reshape(len(labels), X.shape[1])
        self.labels = np.array(labels, dtype=np.int64)
        self.weights = np.ones(len(labels))
        return self


class SlidingWindowMemory(Memory):
    """The most recent ``capacity`` items in arrival order."""

    strategy = "sliding_window"

    def update(self, batch) -> "SlidingWindowMemory":
        X, y = _batch_arrays(batch)
        self._ensure_width(X.shape[1])
        start = max(0, len(self) + len(y) - self.capacity)
        self.features = np.concatenate([self.features, X])[start:]
        self.labels = np.concatenate([self.labels, y])[start:]
        self.weights = np.ones(len(self.labels))
        return self


class ClassBalanceMemory(Memory):
    """Greedy class balancing: a full memory admits an item only if its class is
    below the largest class count, evicting a random member of a largest class.
    """

    strategy = "class_balance"

    def __init__(self, capacity: int, seed: int = 0):
        super().__init__(capacity)
        self.rng = np.random.default_rng(seed)

    def update(self, batch) -> "ClassBalanceMemory":
        X, y = _batch_arrays(batch)
        self._ensure_width(X.shape[1])
        feats = list(self.features)
        labels = list(self.labels)
        counts: dict[int, int] = {}
        for c in labels:
            counts[c] = counts.get(c, 0) + 1
        for x, c in zip(X, y):
            c = int(c)
            if len(labels) < self.capacity:
                feats.append(x)
                labels.append(c)
                counts[c] = counts.get(c, 0) + 1
                continue
            if self.capacity == 0:
                continue
            top = max(counts.values())
            if counts.get(c, 0) >= top:
                continue
            largest = sorted(k for k, v in counts.items() if v == top)
            victim_class = largest[self.rng.integers(len(largest))]
            members = [i for i, lab in enumerate(labels) if lab == victim_class]
            slot = members[self.rng.integers(len(members))]
            counts[victim_class] -= 1
            feats[slot] = x
            labels[slot] = c
            counts[c] = counts.get(c, 0) + 1
        self.features = np.array(feats).reshape(len(labels), X.shape[1])
        self.labels = np.array(labels, dtype=np.int64)
        self.weights = np.ones(len(labels))
        return self


@dataclass
class UpdateStats:
    residual_norm: float
    target_norm: float
    n_clipped: int
    n_selected: int
    dictionary_size: int


class GmcMemory(Memory):
    """Continual gradient-matching coreset over embeddings that never change."""

    def __init__(self, capacity: int, omp: OmpConfig | None = None, strategy: str = "gmc"):
        super().__init__(capacity)
        self.omp = omp or OmpConfig(n=max(capacity, 1))
        self.strategy = strategy
        self.target: np.ndarray | None = None
        self.columns: EmbeddingMatrix | None = None
        self.history: list[UpdateStats] = []

    def update(self, batch, embeddings: EmbeddingMatrix) -> "GmcMemory":
        X, y = _batch_arrays(batch)
        if len(y) == 0:
            raise ValueError("batch must not be empty")
        if embeddings.N != len(y):
            raise ValueError(f"{embeddings.N} embedding columns for a batch of {len(y)}")
        self._ensure_width(X.shape[1])
        if self.columns is not None:
            self.columns.check_compatible(embeddings)
        self.target = sum_columns(embeddings, start=self.target)
        if self.columns is None or self.columns.N == 0:
            dictionary = embeddings
        else:
            dictionary = combine(self.columns, embeddings)
        self._select(dictionary, np.concatenate([self.features, X]), np.concatenate([self.labels, y]))
        return self

    def _select(self, dictionary: EmbeddingMatrix, X: np.ndarray, y: np.ndarray) -> None:
        if self.capacity == 0:
            self.columns = dictionary.select([])
            self.features, self.labels, self.weights = X[:0], y[:0], np.empty(0)
            return
        n = min(self.capacity, dictionary.N)
        res = omp_select(dictionary, self.target, replace(self.omp, n=n))
        idx = res.indices
        self.columns = dictionary.select(idx)
        self.features = X[idx]
        self.labels = y[idx]
        self.weights = res.weights
        self.history.append(UpdateStats(res.residual_norm, float(np.linalg.norm(self.target)),
                                        res.n_clipped, len(idx), dictionary.N))

    @property
    def residual_norm(self) -> float:
        if self.target is None:
            return 0.0
        if len(self) == 0:
            return float(np.linalg.norm(self.target))
        return float(np.linalg.norm(self.target - self.columns.columns @ self.weights))


class LocalGmcMemory(GmcMemory):
    """Gradient matching at the current training iterate.

    Embeddings depend on the parameters, so they are recomputed for the
    coreset and the new batch at every update and the target is only the
    sum over those rows, not the full history.
    """

    def __init__(self, capacity: int, omp: OmpConfig | None = None, d: int = 10_000,
                 projection_seed: int = 0, density: float | None = None, identity: bool = False):
        super().__init__(capacity, omp, strategy="gmc_local")
        self.d = d
        self.projection_seed = projection_seed
        self.density = density
        self.identity = identity

    def update(self, batch, params: ParamVector) -> "LocalGmcMemory":
        X, y = _batch_arrays(batch)
        if len(y) == 0:
            raise ValueError("batch must not be empty")
        self._ensure_width(X.shape[1])
        X_all = np.concatenate([self.features, X])
        y_all = np.concatenate([self.labels, y])
        dictionary = local_embeddings(params, WeightedDataset(X_all, y_all), self.d,
                                      self.projection_seed, self.density, self.identity)
        self.target = sum_columns(dictionary)
        self._select(dictionary, X_all, y_all)
        return self


def reservoir_update(state: ReservoirMemory, batch) -> ReservoirMemory:
    return state.update(batch)


def sliding_window_update(state: SlidingWindowMemory, batch) -> SlidingWindowMemory:
    return state.update(batch)


def class_balance_update(state: ClassBalanceMemory, batch) -> ClassBalanceMemory:
    return state.update(batch)


def gmc_update(state: GmcMemory, batch, batch_embeddings: EmbeddingMatrix) -> GmcMemory:
    return state.update(batch, batch_embeddings)


def gmc_local_update(state: LocalGmcMemory, batch, current_params: ParamVector) -> LocalGmcMemory:
    return state.update(batch, current_params)


def as_weighted_dataset(state: Memory) -> WeightedDataset:
    return state.as_weighted_dataset()


@dataclass(eq=False)
class MemorySnapshot:
    strategy: str
    capacity: int
    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def as_weighted_dataset(self) -> WeightedDataset:
        keep = self.weights > 0
        return WeightedDataset(self.features[keep], self.labels[keep], self.weights[keep])


def write_snapshot(memory: Memory, path) -> None:
    """Binary audit record: header, then per item (label u32, features f64[F], weight f64)."""
    F = memory.features.shape[1] if memory.features is not None else 0
    rec = np.dtype([("label", "<u4"), ("x", "<f8", (F,)), ("w", "<f8")])
    items = np.empty(len(memory), dtype=rec)
    items["label"] = memory.labels
    if F:
        items["x"] = memory.features
    items["w"] = memory.weights
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, STRATEGY_IDS[memory.strategy],
                                   memory.capacity, len(memory), F))
        fh.write(items.tobytes())


def read_snapshot(path) -> MemorySnapshot:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _SNAP_HEADER.size:
        raise ValueError("snapshot file is truncated")
    magic, version, sid, capacity, count, F = _SNAP_HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError("not a memory snapshot (bad magic)")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    rec = np.dtype([("label", "<u4"), ("x", "<f8", (F,)), ("w", "<f8")])
    body = raw[_SNAP_HEADER.size:]
    if len(body) != count * rec.itemsize:
        raise ValueError("snapshot body size does not match its header")
    items = np.frombuffer(body, dtype=rec)
    names = {v: k for k, v in STRATEGY_IDS.items()}
    return MemorySnapshot(
        strategy=names[sid],
        capacity=capacity,
        features=np.array(items["x"], dtype=np.float64).reshape(count, F),
        labels=items["label"].astype(np.int64),
        weights=np.array(items["w"], dtype=np.float64),
    )

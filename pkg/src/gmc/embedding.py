"""Gradient embeddings of labeled examples across the initialization distribution.

Column i of an embedding matrix stacks ``P_s grad loss(theta_s; x_i, y_i)``
for s = 1..S, where theta_s are draws from the initialization distribution
and P_s are independent sparse projections.  Because theta_s and P_s are
fixed by the EmbeddingSpec, the embedding of a data point never changes, which is
what makes exact target tracking over a stream possible.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import IncompatibleEmbeddingError, NonFiniteError
from .model import (
    ArchSpec,
    InitSpec,
    ParamVector,
    WeightedDataset,
    init_params,
    last_layer_grads,
    per_example_grads,
)
from .projection import identity_projection, make_projection, project

MODES = ("full", "last_layer", "local")
_MODE_CODES = {m: i for i, m in enumerate(MODES)}
EMBED_MAGIC = b"GMCE"
EMBED_VERSION = 1
_HEADER = struct.Struct("<4sHBIIQQQ")


@dataclass(frozen=True)
class EmbeddingSpec:
    S: int = 10
    d: int = 1000
    mode: str = "full"
    init: InitSpec = field(default_factory=InitSpec)
    projection_seed: int = 0
    density: float | None = None  # None -> 1/sqrt(source dim)
    identity: bool = False  # skip projection; d becomes the gradient dimension

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown embedding mode {self.mode!r}")
        if self.S < 1 or self.d < 1:
            raise ValueError("S and d must be positive")
        if self.mode == "local" and self.S != 1:
            object.__setattr__(self, "S", 1)


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """dS x N matrix of gradient embeddings plus the provenance needed to combine it."""

    columns: np.ndarray
    spec: EmbeddingSpec
    theta_digest: str | None = None

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=np.float64)
        if cols.ndim != 2:
            raise ValueError("embedding columns must form a 2-D array")
        if not np.all(np.isfinite(cols)):
            raise NonFiniteError("embedding contains non-finite entries")
        cols.setflags(write=False)
        object.__setattr__(self, "columns", cols)

    @property
    def N(self) -> int:
        return self.columns.shape[1]

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    def provenance(self) -> tuple:
        s = self.spec
        return (s.mode, s.S, s.d, s.init, s.projection_seed, s.density, s.identity)

    def check_compatible(self, other: "EmbeddingMatrix") -> None:
        if self.dim != other.dim:
            raise IncompatibleEmbeddingError(
                f"embedding dimensions differ ({self.dim} vs {other.dim})"
            )
        if self.theta_digest is None or other.theta_digest is None:
            # read back from disk: only the header fields are known
            if _header_fields(self) != _header_fields(other):
                raise IncompatibleEmbeddingError("embedding headers differ")
            return
        if self.theta_digest != other.theta_digest:
            raise IncompatibleEmbeddingError("embeddings use different parameter samples")
        if self.provenance() != other.provenance():
            raise IncompatibleEmbeddingError("embedding specs differ")

    def select(self, indices) -> "EmbeddingMatrix":
        return EmbeddingMatrix(self.columns[:, np.asarray(indices, dtype=np.int64)], self.spec, self.theta_digest)


def _header_fields(G: EmbeddingMatrix) -> tuple:
    s = G.spec
    return (s.mode, s.S, G.dim // s.S, s.init.seed, s.projection_seed)


def combine(*blocks: EmbeddingMatrix) -> EmbeddingMatrix:
    """Concatenate embedding matrices column-wise after a provenance check."""
    if not blocks:
        raise ValueError("nothing to combine")
    first = blocks[0]
    for other in blocks[1:]:
        first.check_compatible(other)
    cols = np.concatenate([b.columns for b in blocks], axis=1)
    digest = next((b.theta_digest for b in blocks if b.theta_digest is not None), None)
    return EmbeddingMatrix(cols, first.spec, digest)


def sample_thetas(arch: ArchSpec, spec: EmbeddingSpec) -> list[ParamVector]:
    """The S initialization draws; sample s uses seed ``init.seed + s``."""
    return [init_params(arch, replace(spec.init, seed=spec.init.seed + s)) for s in range(1, spec.S + 1)]


def _grad_dim(arch: ArchSpec, mode: str) -> int:
    if mode == "last_layer":
        return arch.num_classes * arch.widths[-2]
    return arch.num_params


def _projections(source_dim: int, spec: EmbeddingSpec, S: int):
    if spec.identity:
        return [identity_projection(source_dim)] * S
    return [
        make_projection(source_dim, spec.d, spec.density, spec.projection_seed + s)
        for s in range(1, S + 1)
    ]


def _digest(thetas: list[ParamVector]) -> str:
    h = hashlib.sha256()
    for t in thetas:
        h.update(t.values.tobytes())
    return h.hexdigest()[:16]


class Embedder:
    """Builds embeddings for a fixed (arch, spec), caching theta samples and projections.

    Reusing one Embedder across a stream avoids regenerating the S parameter
    draws and projections for every batch; results are identical to
    calling :func:`build_embeddings` each time.
    """

    def __init__(self, arch: ArchSpec, spec: EmbeddingSpec):
        if spec.mode not in ("full", "last_layer"):
            raise ValueError("use local_embeddings for mode='local'")
        self.arch = arch
        self.spec = spec
        self.thetas = sample_thetas(arch, spec)
        self.projections = _projections(_grad_dim(arch, spec.mode), spec, spec.S)
        self.digest = _digest(self.thetas)
        self.out_dim = self.projections[0].d

    def __call__(self, dataset: WeightedDataset) -> EmbeddingMatrix:
        if len(dataset) == 0:
            raise ValueError("cannot embed an empty dataset")
        if dataset.features.shape[1] != self.arch.input_dim:
            raise ValueError("dataset feature width does not match the architecture")
        unit = WeightedDataset(dataset.features, dataset.labels)
        d = self.out_dim
        G = np.empty((d * self.spec.S, len(unit)))
        for s, (theta, P) in enumerate(zip(self.thetas, self.projections)):
            if self.spec.mode == "full":
                grads = per_example_grads(theta, unit)
            else:
                grads = last_layer_grads(theta, unit)
            G[s * d:(s + 1) * d] = project(P, grads).T
        return EmbeddingMatrix(G, self.spec, self.digest)


def build_embeddings(dataset: WeightedDataset, arch: ArchSpec, spec: EmbeddingSpec) -> EmbeddingMatrix:
    """Embed every example of ``dataset`` (one column per example)."""
    return Embedder(arch, spec)(dataset)


def local_embeddings(params: ParamVector, dataset: WeightedDataset, d: int = 10_000,
                     projection_seed: int = 0, density: float | None = None,
                     identity: bool = False) -> EmbeddingMatrix:
    """Single-sample embeddings taken at ``params`` itself rather than at an init draw.

    The default ``d`` equals S*d of the default global embedding so that the
    embedding dimension matches.
    """
    if len(dataset) == 0:
        raise ValueError("cannot embed an empty dataset")
    spec = EmbeddingSpec(S=1, d=d, mode="local", projection_seed=projection_seed,
                         density=density, identity=identity)
    P = _projections(params.arch.num_params, spec, 1)[0]
    grads = per_example_grads(params, WeightedDataset(dataset.features, dataset.labels))
    return EmbeddingMatrix(project(P, grads).T, spec, params.digest())


def sum_columns(G: EmbeddingMatrix | np.ndarray, start: np.ndarray | None = None) -> np.ndarray:
    """Column sum accumulated in index order, optionally continuing from ``start``.

    Continuing a running sum batch by batch gives bitwise the same vector as
    summing all columns at once.
    """
    cols = G.columns if isinstance(G, EmbeddingMatrix) else np.asarray(G, dtype=np.float64)
    total = np.zeros(cols.shape[0]) if start is None else np.array(start, dtype=np.float64)
    for i in range(cols.shape[1]):
        total += cols[:, i]
    return total


def gram(G: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    """Kernel matrix K = G^T G between examples."""
    cols = G.columns if isinstance(G, EmbeddingMatrix) else np.asarray(G, dtype=np.float64)
    K = cols.T @ cols
    return 0.5 * (K + K.T)


def write_embeddings(path, G: EmbeddingMatrix) -> None:
    s = G.spec
    header = _HEADER.pack(EMBED_MAGIC, EMBED_VERSION, _MODE_CODES[s.mode], s.S,
                          G.dim // s.S, G.N, s.init.seed, s.projection_seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asfortranarray(G.columns).astype("<f8").tobytes(order="F"))


def read_embeddings(path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("embedding file is truncated")
    magic, version, mode, S, d, N, init_seed, proj_seed = _HEADER.unpack_from(raw)
    if magic != EMBED_MAGIC:
        raise ValueError("not an embedding file (bad magic)")
    if version != EMBED_VERSION:
        raise ValueError(f"unsupported embedding file version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != S * d * N:
        raise ValueError(f"embedding file holds {body.size} values, expected {S * d * N}")
    spec = EmbeddingSpec(S=S, d=d, mode=MODES[mode], init=InitSpec(seed=init_seed),
                         projection_seed=proj_seed)
    cols = body.reshape((S * d, N), order="F").astype(np.float64)
    return EmbeddingMatrix(np.ascontiguousarray(cols), spec, None)

"""Gradient-matching coresets for rehearsal-based continual learning."""

from ._backend import BACKEND
from .embedding import (
    Embedder,
    EmbeddingMatrix,
    EmbeddingSpec,
    build_embeddings,
    gram,
    local_embeddings,
    sum_columns,
)
from .errors import ConfigError, IncompatibleEmbeddingError, NonFiniteError, SingularSystemError
from .memory import (
    ClassBalanceMemory,
    GmcMemory,
    LocalGmcMemory,
    ReservoirMemory,
    SlidingWindowMemory,
)
from .model import ArchSpec, InitSpec, ParamVector, TrainConfig, WeightedDataset, init_params, train
from .omp import CholState, OmpConfig, best_uniform, chol_append, omp_select, solve_weights
from .projection import make_projection, project

__version__ = "0.1.0"

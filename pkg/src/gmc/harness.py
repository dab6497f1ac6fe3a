"""Continual-learning runs (GDumb and Experience Replay) over any memory strategy."""

from __future__ import annotations

import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

from .embedding import Embedder, EmbeddingSpec
from .errors import ConfigError
from .memory import (
    STRATEGY_IDS,
    ClassBalanceMemory,
    GmcMemory,
    LocalGmcMemory,
    Memory,
    ReservoirMemory,
    SlidingWindowMemory,
)
from .model import ArchSpec, InitSpec, ParamVector, TrainConfig, WeightedDataset, init_params, predict, train
from .omp import OmpConfig
from .scenarios import (
    Dataset,
    ScenarioStream,
    class_incremental_split,
    load_csv,
    rotated_domain_split,
    sorted_taskfree_split,
    standardize,
    synth_blobs,
    train_test_split,
)

log = logging.getLogger(__name__)

PARADIGMS = ("gdumb", "er")
SWEEP_AXES = ("S", "d", "lambda", "init_family", "init_scale")


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "sorted"  # sorted | class_incremental | rotated
    source: str = "blobs"  # blobs | csv
    # synthetic blobs
    num_classes: int = 5
    per_class: int = 1000
    num_features: int = 10
    spread: float = 1.0
    drift: float = 0.0
    separation: float = 3.0
    # csv
    path: str | None = None
    test_path: str | None = None
    label_column: str = "label"
    has_header: bool = True
    image_shape: tuple[int, int] | None = None
    # stream construction
    test_fraction: float = 0.2
    num_batches: int = 10
    feature_index: int = 0
    classes_per_task: int = 2
    folds: int = 4
    seed: int = 0


@dataclass(frozen=True)
class OmpSettings:
    lam: float = 0.5
    clip_negative: bool = True
    center: str = "uniform"


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    strategy: str = "gmc"
    paradigm: str = "gdumb"
    memory_size: int = 100
    hidden: tuple[int, ...] = (128, 128)
    model_init: InitSpec = field(default_factory=InitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    embedding: EmbeddingSpec = field(default_factory=EmbeddingSpec)
    omp: OmpSettings = field(default_factory=OmpSettings)
    local_d: int = 10_000
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.strategy not in STRATEGY_IDS:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.paradigm not in PARADIGMS:
            raise ConfigError(f"unknown paradigm {self.paradigm!r}")
        if self.memory_size < 0:
            raise ConfigError("memory_size must be nonnegative")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a table")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from nested plain values (field names match the dataclasses)."""
    try:
        data = dict(data)
        sc = dict(data.pop("scenario", {}))
        if sc.get("image_shape") is not None:
            sc["image_shape"] = tuple(sc["image_shape"])
        emb = dict(data.pop("embedding", {}))
        emb["init"] = _build(InitSpec, emb.pop("init", {}), "embedding.init")
        data["scenario"] = _build(ScenarioConfig, sc, "scenario")
        data["embedding"] = _build(EmbeddingSpec, emb, "embedding")
        data["model_init"] = _build(InitSpec, data.pop("model_init", {}), "model_init")
        data["train"] = _build(TrainConfig, data.pop("train", {}), "train")
        data["omp"] = _build(OmpSettings, data.pop("omp", {}), "omp")
        data["hidden"] = tuple(data.pop("hidden", (128, 128)))
        data["seeds"] = tuple(data.pop("seeds", (0,)))
        cfg = _build(RunConfig, data, "config")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg)))


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def derive_seed(seed: int, tag: str) -> int:
    """Independent 32-bit stream seed for one component of a run."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(tag.encode())])
    return int(ss.generate_state(1)[0])


def build_stream(sc: ScenarioConfig) -> ScenarioStream:
    """Load or synthesize the data, standardize with train statistics, and split."""
    if sc.source == "blobs":
        data = synth_blobs(sc.num_classes, sc.per_class, sc.num_features, sc.spread, sc.drift,
                           sc.seed, sc.separation)
        if sc.image_shape is not None:
            data = Dataset(data.features, data.labels, data.num_classes, tuple(sc.image_shape))
        train_set, test_set = train_test_split(data, sc.test_fraction, sc.seed)
        train_set, test_set = standardize(train_set, test_set)
    elif sc.source == "csv":
        if not sc.path:
            raise ConfigError("scenario.path is required for csv sources")
        train_set = load_csv(sc.path, sc.label_column, sc.has_header)
        if sc.test_path:
            test_set = load_csv(sc.test_path, sc.label_column, sc.has_header,
                                stats=(train_set.mean, train_set.std), label_names=train_set.label_names)
        else:
            raw = load_csv(sc.path, sc.label_column, sc.has_header, standardize_features=False)
            train_set, test_set = standardize(*train_test_split(raw, sc.test_fraction, sc.seed))
        if sc.image_shape is not None:
            shape = tuple(sc.image_shape)
            train_set = replace_shape(train_set, shape)
            test_set = replace_shape(test_set, shape)
    else:
        raise ConfigError(f"unknown scenario source {sc.source!r}")

    if sc.kind == "sorted":
        stream = sorted_taskfree_split(train_set, test_set, sc.feature_index, sc.num_batches)
    elif sc.kind == "class_incremental":
        stream = class_incremental_split(train_set, test_set, sc.classes_per_task)
    elif sc.kind == "rotated":
        stream = rotated_domain_split(train_set, test_set, sc.folds, sc.seed)
    else:
        raise ConfigError(f"unknown scenario kind {sc.kind!r}")
    stream.seed = sc.seed
    stream.notes["standardization"] = "train-split statistics"
    return stream


def replace_shape(ds: Dataset, shape) -> Dataset:
    return Dataset(ds.features, ds.labels, ds.num_classes, shape, ds.feature_names,
                   ds.label_names, ds.mean, ds.std)


@dataclass
class RunMetrics:
    run_id: str
    scenario: str
    strategy: str
    paradigm: str
    n: int
    seed: int
    per_task_acc: list[float]
    final_acc: float
    timings: dict[str, float]
    task_slice_acc: list[list[float]] | None = None
    residual_norms: list[float] = field(default_factory=list)
    clipped: list[int] = field(default_factory=list)
    config: dict | None = None
    er_epochs_over: str | None = None
    sweep_axis: str | None = None
    sweep_value: Any = None
    # in-memory only; never serialized
    final_params: ParamVector | None = field(default=None, repr=False, compare=False)
    final_memory: Memory | None = field(default=None, repr=False, compare=False)

    def to_record(self) -> dict:
        rec = {f.name: getattr(self, f.name) for f in fields(self)
               if f.name not in ("final_params", "final_memory")}
        return json.loads(json.dumps(rec))

    @classmethod
    def from_record(cls, rec: dict) -> "RunMetrics":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in rec.items() if k in known})


def write_metrics(metrics: list[RunMetrics], path, append: bool = False) -> None:
    with open(path, "a" if append else "w") as fh:
        for m in metrics:
            fh.write(json.dumps(m.to_record()) + "\n")


def read_metrics(path) -> list[RunMetrics]:
    with open(path) as fh:
        return [RunMetrics.from_record(json.loads(line)) for line in fh if line.strip()]


def evaluate(params: ParamVector, test_set) -> float:
    """Fraction of rows whose argmax logit (lowest index on ties) equals the label."""
    if len(test_set.labels) == 0:
        return 0.0
    return float(np.mean(predict(params, test_set.features) == test_set.labels))


def make_memory(strategy: str, config: RunConfig, seed: int) -> Memory:
    n = config.memory_size
    mem_seed = derive_seed(seed, "memory")
    omp = OmpConfig(n=max(n, 1), lam=config.omp.lam, clip_negative=config.omp.clip_negative,
                    center=config.omp.center)
    if strategy == "reservoir":
        return ReservoirMemory(n, mem_seed)
    if strategy == "sliding_window":
        return SlidingWindowMemory(n)
    if strategy == "class_balance":
        return ClassBalanceMemory(n, mem_seed)
    if strategy in ("gmc", "gmc_last_layer"):
        return GmcMemory(n, omp, strategy=strategy)
    if strategy == "gmc_local":
        spec = config.embedding
        return LocalGmcMemory(n, omp, d=config.local_d,
                              projection_seed=spec.projection_seed + derive_seed(seed, "projection"),
                              density=spec.density, identity=spec.identity)
    raise ConfigError(f"unknown strategy {strategy!r}")


def run_embedding_spec(config: RunConfig, strategy: str, seed: int) -> EmbeddingSpec:
    """The run's embedding spec: base seeds offset by the run seed, mode from the strategy."""
    spec = config.embedding
    mode = "last_layer" if strategy == "gmc_last_layer" else "full"
    return replace(spec, mode=mode,
                   init=replace(spec.init, seed=spec.init.seed + derive_seed(seed, "embed-init")),
                   projection_seed=spec.projection_seed + derive_seed(seed, "projection"))


class _Runner:
    """Shared per-run state: memory, embedder, timers, and evaluation bookkeeping."""

    def __init__(self, stream: ScenarioStream, strategy: str, config: RunConfig, seed: int):
        if not stream.batches:
            raise ConfigError("stream has no batches")
        first = stream.batches[0]
        self.stream = stream
        self.strategy = strategy
        self.config = config
        self.seed = seed
        self.arch = ArchSpec(first.num_features, config.hidden, stream.test_set.num_classes)
        self.memory = make_memory(strategy, config, seed)
        self.embedder = None
        if strategy in ("gmc", "gmc_last_layer") and config.memory_size > 0:
            self.embedder = Embedder(self.arch, run_embedding_spec(config, strategy, seed))
        self.timings = {"embed": 0.0, "select": 0.0, "train": 0.0}
        self.per_task: list[float] = []
        self.slices: list[list[float]] = []
        self.init_seed = config.model_init.seed + derive_seed(seed, "model-init")
        self.train_seed = config.train.seed + derive_seed(seed, "train")

    def init(self, t: int) -> ParamVector:
        return init_params(self.arch, replace(self.config.model_init, seed=self.init_seed + t))

    def update_memory(self, batch: Dataset, params: ParamVector) -> None:
        if len(batch) == 0:
            raise ValueError("empty batch in stream")
        mem = self.memory
        if self.config.memory_size == 0:
            return
        if isinstance(mem, LocalGmcMemory):
            t0 = time.perf_counter()
            mem.update(batch, params)
            self.timings["select"] += time.perf_counter() - t0
        elif isinstance(mem, GmcMemory):
            t0 = time.perf_counter()
            G = self.embedder(batch.weighted())
            t1 = time.perf_counter()
            mem.update(batch, G)
            self.timings["embed"] += t1 - t0
            self.timings["select"] += time.perf_counter() - t1
        else:
            t0 = time.perf_counter()
            mem.update(batch)
            self.timings["select"] += time.perf_counter() - t0

    def fit(self, params: ParamVector, data: WeightedDataset, t: int) -> ParamVector:
        if len(data) == 0:
            return params
        t0 = time.perf_counter()
        out = train(params, data, replace(self.config.train, seed=self.train_seed + t))
        self.timings["train"] += time.perf_counter() - t0
        return out

    def record(self, params: ParamVector) -> None:
        test = self.stream.test_set
        self.per_task.append(evaluate(params, test))
        if self.stream.task_test_indices is not None:
            self.slices.append([evaluate(params, test.subset(idx)) for idx in self.stream.task_test_indices])

    def metrics(self, paradigm: str, params: ParamVector) -> RunMetrics:
        mem = self.memory
        residuals, clipped = [], []
        if isinstance(mem, GmcMemory):
            residuals = [h.residual_norm for h in mem.history]
            clipped = [h.n_clipped for h in mem.history]
        return RunMetrics(
            run_id=f"{self.stream.kind}-{paradigm}-{self.strategy}-n{self.config.memory_size}-s{self.seed}",
            scenario=self.stream.kind,
            strategy=self.strategy,
            paradigm=paradigm,
            n=self.config.memory_size,
            seed=self.seed,
            per_task_acc=self.per_task,
            final_acc=self.per_task[-1],
            timings=dict(self.timings),
            task_slice_acc=self.slices or None,
            residual_norms=residuals,
            clipped=clipped,
            config=config_to_dict(self.config),
            er_epochs_over="union" if paradigm == "er" else None,
            final_params=params,
            final_memory=mem,
        )


def run_gdumb(stream: ScenarioStream, strategy: str, config: RunConfig, seed: int = 0) -> RunMetrics:
    """After each batch: update the memory, retrain from a fresh init on it alone, evaluate."""
    r = _Runner(stream, strategy, config, seed)
    params = r.init(0)
    for t, batch in enumerate(stream.batches):
        # the local variant embeds at the most recent trained model
        r.update_memory(batch, params)
        params = r.fit(r.init(t), r.memory.as_weighted_dataset(), t)
        r.record(params)
        log.debug("gdumb %s seed %d task %d acc %.4f", strategy, seed, t, r.per_task[-1])
    return r.metrics("gdumb", params)


def _union(batch: Dataset, memory: Memory) -> WeightedDataset:
    mem = memory.as_weighted_dataset()
    if len(mem) == 0:
        return batch.weighted()
    return WeightedDataset(np.concatenate([batch.features, mem.features]),
                           np.concatenate([batch.labels, mem.labels]),
                           np.concatenate([np.ones(len(batch)), mem.weights]))


def run_er(stream: ScenarioStream, strategy: str, config: RunConfig, seed: int = 0) -> RunMetrics:
    """Train continually on batch plus memory, then update the memory, then evaluate."""
    r = _Runner(stream, strategy, config, seed)
    params = r.init(0)
    for t, batch in enumerate(stream.batches):
        if len(batch) == 0:
            raise ValueError("empty batch in stream")
        params = r.fit(params, _union(batch, r.memory), t)
        r.update_memory(batch, params)
        r.record(params)
        log.debug("er %s seed %d task %d acc %.4f", strategy, seed, t, r.per_task[-1])
    return r.metrics("er", params)


def run(config: RunConfig, stream: ScenarioStream | None = None) -> list[RunMetrics]:
    """One run per configured seed."""
    stream = stream or build_stream(config.scenario)
    runner = run_gdumb if config.paradigm == "gdumb" else run_er
    return [runner(stream, config.strategy, config, s) for s in config.seeds]


def with_axis(config: RunConfig, axis: str, value) -> RunConfig:
    emb = config.embedding
    if axis == "S":
        return replace(config, embedding=replace(emb, S=int(value)))
    if axis == "d":
        return replace(config, embedding=replace(emb, d=int(value)))
    if axis == "lambda":
        return replace(config, omp=replace(config.omp, lam=float(value)))
    if axis == "init_family":
        return replace(config, embedding=replace(emb, init=replace(emb.init, family=str(value))))
    if axis == "init_scale":
        return replace(config, embedding=replace(emb, init=replace(emb.init, scale=float(value))))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def sweep(config: RunConfig, axis: str, values, stream: ScenarioStream | None = None) -> list[RunMetrics]:
    """Vary one hyperparameter of the base config; every other field stays fixed."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    stream = stream or build_stream(config.scenario)
    out = []
    for v in values:
        for m in run(with_axis(config, axis, v), stream):
            m.sweep_axis, m.sweep_value = axis, v
            m.run_id += f"-{axis}={v}"
            out.append(m)
    return out


def aggregate(metrics: list[RunMetrics]) -> list[dict]:
    """Mean and standard deviation of final accuracy per configuration group."""
    groups: dict[tuple, list[RunMetrics]] = {}
    for m in metrics:
        key = (m.scenario, m.paradigm, m.strategy, m.n, m.sweep_axis, m.sweep_value)
        groups.setdefault(key, []).append(m)
    rows = []
    for (scenario, paradigm, strategy, n, axis, value), ms in groups.items():
        accs = np.array([m.final_acc for m in ms])
        rows.append({
            "scenario": scenario, "paradigm": paradigm, "strategy": strategy, "n": n,
            "axis": axis, "value": value, "runs": len(ms),
            "mean_acc": float(accs.mean()), "std_acc": float(accs.std()),
            "embed_s": float(np.mean([m.timings.get("embed", 0.0) for m in ms])),
            "select_s": float(np.mean([m.timings.get("select", 0.0) for m in ms])),
            "train_s": float(np.mean([m.timings.get("train", 0.0) for m in ms])),
        })
    return rows

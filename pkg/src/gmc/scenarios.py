"""Datasets and continual-learning streams built from them.

Three stream constructions are provided: a task-free stream obtained by
sorting on one feature and cutting into contiguous batches, a
class-incremental stream grouping labels in ascending order, and a
domain-incremental stream that rotates square images by multiples of 90
degrees.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .model import WeightedDataset


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int | None = None
    image_shape: tuple[int, int] | None = None
    feature_names: tuple[str, ...] | None = None
    label_names: tuple[str, ...] | None = None
    mean: np.ndarray | None = None  # standardization applied, if any
    std: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(len(X), -1) if len(X) else X.reshape(0, 0)
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if X.shape[0] != len(y):
            raise ValueError("features and labels have different lengths")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        C = self.num_classes if self.num_classes is not None else (int(y.max()) + 1 if len(y) else 0)
        if len(y) and (y.min() < 0 or y.max() >= C):
            raise ValueError(f"labels must lie in [0, {C})")
        if self.image_shape is not None:
            h, w = self.image_shape
            if h * w != X.shape[1]:
                raise ValueError("image_shape does not match the feature count")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "num_classes", C)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes,
                       self.image_shape, self.feature_names, self.label_names,
                       self.mean, self.std)

    def weighted(self, weights=None) -> WeightedDataset:
        return WeightedDataset(self.features, self.labels, weights)

    def class_histogram(self) -> list[int]:
        return np.bincount(self.labels, minlength=self.num_classes).tolist()


@dataclass(eq=False)
class ScenarioStream:
    batches: list[Dataset]
    test_set: Dataset
    kind: str
    seed: int | None = None
    # test-set indices belonging to each task, where tasks have a natural slice
    task_test_indices: list[np.ndarray] | None = None
    notes: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.batches)

    def manifest(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "num_batches": len(self.batches),
            "batch_sizes": [len(b) for b in self.batches],
            "class_histograms": [b.class_histogram() for b in self.batches],
            "test_size": len(self.test_set),
            "test_class_histogram": self.test_set.class_histogram(),
            "standardized": self.test_set.mean is not None,
            **self.notes,
        }


def write_manifest(stream: ScenarioStream, path) -> None:
    with open(path, "w") as fh:
        json.dump(stream.manifest(), fh, indent=2)
        fh.write("\n")


def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Scale every column to zero mean / unit variance using ``train`` statistics.

    Constant columns keep a unit divisor and therefore become all zero.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        mean = train.features.mean(axis=0)
        std = train.features.std(axis=0)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
        raise DataFormatError("feature statistics overflow; rescale the input")
    std = np.where(std > 0, std, 1.0)
    out = []
    for ds in (train, *others):
        out.append(Dataset((ds.features - mean) / std, ds.labels, ds.num_classes,
                           ds.image_shape, ds.feature_names, ds.label_names, mean, std))
    return tuple(out)


def load_csv(path, label_column, has_header: bool = True, standardize_features: bool = True,
             stats: tuple[np.ndarray, np.ndarray] | None = None,
             label_names=None) -> Dataset:
    """Read a numeric CSV with one categorical label column.

    ``label_column`` is a header name or a zero-based position.  Labels are
    re-indexed densely in order of first appearance unless ``label_names``
    (e.g. from the training file) fixes the mapping.  Features are
    standardized with their own statistics, or with ``stats = (mean, std)``.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    header = rows.pop(0) if has_header else None
    width = len(header) if header is not None else len(rows[0])
    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if header is None or label_column not in header:
            raise DataFormatError(f"{path}: unknown label column {label_column!r}")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column)
        if not -width <= label_idx < width:
            raise DataFormatError(f"{path}: label column {label_idx} out of range")
        label_idx %= width

    mapping = {name: i for i, name in enumerate(label_names)} if label_names is not None else {}
    fixed = label_names is not None
    X = np.empty((len(rows), width - 1))
    y = np.empty(len(rows), dtype=np.int64)
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"{path}: row {r + 1} has {len(row)} fields, expected {width}")
        raw_label = row[label_idx].strip()
        if raw_label not in mapping:
            if fixed:
                raise DataFormatError(f"{path}: unseen label {raw_label!r} in row {r + 1}")
            mapping[raw_label] = len(mapping)
        y[r] = mapping[raw_label]
        cells = row[:label_idx] + row[label_idx + 1:]
        try:
            X[r] = [float(c) for c in cells]
        except ValueError as exc:
            raise DataFormatError(f"{path}: non-numeric feature in row {r + 1}: {exc}") from None

    names = None
    if header is not None:
        names = tuple(h for i, h in enumerate(header) if i != label_idx)
    ds = Dataset(X, y, len(mapping), feature_names=names, label_names=tuple(mapping))
    if stats is not None:
        mean, std = stats
        return Dataset((X - mean) / std, y, ds.num_classes, None, names, ds.label_names, mean, std)
    if standardize_features:
        return standardize(ds)[0]
    return ds


def write_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    names = dataset.feature_names or tuple(f"x{i}" for i in range(dataset.num_features))
    labels = dataset.label_names or tuple(str(i) for i in range(dataset.num_classes))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, label_column])
        for x, c in zip(dataset.features, dataset.labels):
            w.writerow([*(repr(float(v)) for v in x), labels[c]])


def synth_blobs(C: int, per_class: int, F: int, spread: float = 1.0, drift: float = 0.0,
                seed: int = 0, separation: float = 3.0) -> Dataset:
    """Gaussian class blobs whose centers slide along feature 0.

    The j-th sample of class c is drawn around ``mu_c + drift * j * e_0``
    with isotropic noise of scale ``spread``; rows are returned class by
    class.  ``separation`` scales the random class centers.
    """
    if C < 1 or per_class < 0 or F < 1:
        raise ValueError("C and F must be positive, per_class nonnegative")
    rng = np.random.default_rng(seed)
    centers = separation * rng.standard_normal((C, F))
    j = np.arange(per_class, dtype=np.float64)
    X = np.empty((C * per_class, F))
    for c in range(C):
        block = np.repeat(centers[c][None, :], per_class, axis=0)
        block[:, 0] += drift * j
        X[c * per_class:(c + 1) * per_class] = block + spread * rng.standard_normal((per_class, F))
    y = np.repeat(np.arange(C), per_class)
    return Dataset(X, y, C, feature_names=tuple(f"x{i}" for i in range(F)))


def train_test_split(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(dataset))
    n_test = int(round(test_fraction * len(dataset)))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def _balanced_bounds(N: int, T: int) -> list[tuple[int, int]]:
    sizes = [N // T + (1 if t < N % T else 0) for t in range(T)]
    bounds, lo = [], 0
    for s in sizes:
        bounds.append((lo, lo + s))
        lo += s
    return bounds


def sorted_taskfree_split(dataset: Dataset, test_set: Dataset, feature_index: int = 0,
                          T: int = 10) -> ScenarioStream:
    """Stable-sort by one feature and cut into T contiguous batches of near-equal size."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0 <= feature_index < dataset.num_features:
        raise IndexError(f"feature index {feature_index} out of range")
    order = np.argsort(dataset.features[:, feature_index], kind="stable")
    batches = [dataset.subset(order[lo:hi]) for lo, hi in _balanced_bounds(len(dataset), T)]
    return ScenarioStream(batches, test_set, "sorted", notes={"feature_index": feature_index})


def class_incremental_split(dataset: Dataset, test_set: Dataset, classes_per_task: int = 2) -> ScenarioStream:
    """Tasks hold consecutive label groups {0..k-1}, {k..2k-1}, ... in ascending order."""
    if classes_per_task < 1:
        raise ValueError("classes_per_task must be positive")
    C = dataset.num_classes
    groups = [list(range(lo, min(lo + classes_per_task, C))) for lo in range(0, C, classes_per_task)]
    batches, slices = [], []
    for grp in groups:
        batches.append(dataset.subset(np.flatnonzero(np.isin(dataset.labels, grp))))
        slices.append(np.flatnonzero(np.isin(test_set.labels, grp)))
    return ScenarioStream(batches, test_set, "class_incremental", task_test_indices=slices,
                          notes={"class_groups": groups})


def rotation_permutation(h: int, w: int, quarter_turns: int) -> np.ndarray:
    """Index permutation p with ``rotated = image.ravel()[p]`` (clockwise turns)."""
    if h != w and quarter_turns % 2:
        raise ValueError("odd quarter turns need square images")
    return np.rot90(np.arange(h * w).reshape(h, w), -quarter_turns).ravel()


def rotate_images(dataset: Dataset, quarter_turns: int) -> Dataset:
    if dataset.image_shape is None:
        raise ValueError("dataset has no image_shape")
    perm = rotation_permutation(*dataset.image_shape, quarter_turns)
    return Dataset(dataset.features[:, perm], dataset.labels, dataset.num_classes,
                   dataset.image_shape, None, dataset.label_names, dataset.mean, dataset.std)


def _concat(parts: list[Dataset], like: Dataset) -> Dataset:
    return Dataset(np.concatenate([p.features for p in parts]), np.concatenate([p.labels for p in parts]),
                   like.num_classes, like.image_shape, None, like.label_names, like.mean, like.std)


def rotated_domain_split(dataset: Dataset, test_set: Dataset, folds: int = 4, seed: int = 0) -> ScenarioStream:
    """Random disjoint folds, fold k rotated by k * 90 degrees; the test set likewise."""
    if dataset.image_shape is None or test_set.image_shape is None:
        raise ValueError("rotated split needs datasets with an image_shape")
    rng = np.random.default_rng(seed)
    train_perm = rng.permutation(len(dataset))
    test_perm = rng.permutation(len(test_set))
    batches, test_parts, slices = [], [], []
    offset = 0
    for k, ((lo, hi), (tlo, thi)) in enumerate(zip(_balanced_bounds(len(dataset), folds),
                                                  _balanced_bounds(len(test_set), folds))):
        batches.append(rotate_images(dataset.subset(np.sort(train_perm[lo:hi])), k))
        part = rotate_images(test_set.subset(np.sort(test_perm[tlo:thi])), k)
        test_parts.append(part)
        slices.append(np.arange(offset, offset + len(part)))
        offset += len(part)
    return ScenarioStream(batches, _concat(test_parts, test_set), "rotated", seed=seed,
                          task_test_indices=slices, notes={"quarter_turns": list(range(folds))})

import json

import numpy as np
import pytest

from gmc.model import ArchSpec, InitSpec, TrainConfig, init_params, predict, train
from gmc.scenarios import (
    Dataset,
    DataFormatError,
    class_incremental_split,
    load_csv,
    rotate_images,
    rotated_domain_split,
    rotation_permutation,
    sorted_taskfree_split,
    synth_blobs,
    train_test_split,
    write_csv,
    write_manifest,
)


def test_load_csv_small(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n1,2,cat\n3,4,dog\n5,6,cat\n")
    ds = load_csv(p, "label", standardize_features=False)
    np.testing.assert_array_equal(ds.features, [[1, 2], [3, 4], [5, 6]])
    np.testing.assert_array_equal(ds.labels, [0, 1, 0])
    assert ds.label_names == ("cat", "dog")
    assert ds.feature_names == ("a", "b")


def test_load_csv_positional_label_no_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("7,1.5,2\n8,2.5,3\n")
    ds = load_csv(p, 0, has_header=False, standardize_features=False)
    np.testing.assert_array_equal(ds.features, [[1.5, 2], [2.5, 3]])
    np.testing.assert_array_equal(ds.labels, [0, 1])


def test_constant_column_standardizes_to_zero(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y\n4,1,0\n4,2,1\n4,3,0\n")
    ds = load_csv(p, "y")
    np.testing.assert_array_equal(ds.features[:, 0], 0.0)
    np.testing.assert_allclose(ds.features[:, 1].mean(), 0, atol=1e-15)
    np.testing.assert_allclose(ds.features[:, 1].std(), 1)


def test_test_file_uses_training_statistics(tmp_path):
    tr, te = tmp_path / "tr.csv", tmp_path / "te.csv"
    tr.write_text("a,y\n0,x\n2,z\n")
    te.write_text("a,y\n4,z\n")
    train_ds = load_csv(tr, "y")
    test_ds = load_csv(te, "y", stats=(train_ds.mean, train_ds.std), label_names=train_ds.label_names)
    np.testing.assert_allclose(test_ds.features, [[3.0]])
    np.testing.assert_array_equal(test_ds.labels, [1])


@pytest.mark.parametrize("text,column", [
    ("a,y\n1,0\n2\n", "y"),
    ("a,y\n1,0\nfoo,1\n", "y"),
    ("a,y\n1,0\n", "label"),
    ("", "y"),
])
def test_load_csv_errors(tmp_path, text, column):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DataFormatError):
        load_csv(p, column)


def test_csv_round_trip(tmp_path, rng):
    ds = Dataset(rng.standard_normal((20, 3)), rng.integers(0, 4, 20), 4)
    write_csv(ds, tmp_path / "r.csv")
    back = load_csv(tmp_path / "r.csv", "label", standardize_features=False,
                    label_names=[str(i) for i in range(4)])
    np.testing.assert_allclose(back.features, ds.features, atol=1e-12)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_blobs_shape_and_determinism():
    a = synth_blobs(4, 25, 6, seed=3)
    b = synth_blobs(4, 25, 6, seed=3)
    assert a.features.shape == (100, 6)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, np.repeat(np.arange(4), 25))


def test_blobs_zero_spread_follows_drift():
    ds = synth_blobs(3, 10, 4, spread=0.0, drift=0.5, seed=1)
    for c in range(3):
        block = ds.features[ds.labels == c]
        np.testing.assert_allclose(np.diff(block[:, 0]), 0.5)
        np.testing.assert_array_equal(block[:, 1:], np.repeat(block[:1, 1:], 10, axis=0))


def test_blobs_linearly_separable():
    ds = synth_blobs(4, 150, 8, spread=0.5, seed=0, separation=4.0)
    tr, te = train_test_split(ds, 0.25, seed=0)
    arch = ArchSpec(8, (), 4)
    params = train(init_params(arch, InitSpec(seed=0)), tr.weighted(),
                   TrainConfig(step_size=1e-2, epochs=30, minibatch=32))
    assert (predict(params, te.features) == te.labels).mean() > 0.95


def test_train_test_split_partition(rng):
    ds = Dataset(np.arange(50.0)[:, None], np.zeros(50, dtype=int))
    tr, te = train_test_split(ds, 0.2, seed=4)
    assert (len(tr), len(te)) == (40, 10)
    assert sorted(np.concatenate([tr.features[:, 0], te.features[:, 0]])) == list(range(50))


def test_sorted_split_sizes_and_order(rng):
    ds = Dataset(rng.standard_normal((1005, 3)), rng.integers(0, 3, 1005))
    stream = sorted_taskfree_split(ds, ds, feature_index=1, T=10)
    sizes = [len(b) for b in stream.batches]
    assert sum(sizes) == 1005 and max(sizes) - min(sizes) <= 1
    assert set(sizes) == {100, 101}
    for prev, nxt in zip(stream.batches, stream.batches[1:]):
        assert prev.features[:, 1].max() <= nxt.features[:, 1].min()
    assert stream.test_set is ds


def test_sorted_split_is_stable():
    X = np.array([[1.0, 0], [0.0, 1], [1.0, 2], [0.0, 3]])
    stream = sorted_taskfree_split(Dataset(X, np.zeros(4, dtype=int)), Dataset(X, np.zeros(4, dtype=int)), 0, T=1)
    np.testing.assert_array_equal(stream.batches[0].features[:, 1], [1, 3, 0, 2])


def test_sorted_split_bad_feature(rng):
    ds = Dataset(rng.standard_normal((10, 2)), np.zeros(10, dtype=int))
    with pytest.raises(IndexError):
        sorted_taskfree_split(ds, ds, feature_index=2)
    with pytest.raises(ValueError):
        sorted_taskfree_split(ds, ds, T=0)


def test_class_incremental_groups(rng):
    ds = Dataset(rng.standard_normal((200, 2)), np.arange(200) % 10, 10)
    stream = class_incremental_split(ds, ds, 2)
    assert len(stream) == 5
    for t, b in enumerate(stream.batches):
        assert set(b.labels.tolist()) == {2 * t, 2 * t + 1}
        assert set(ds.labels[stream.task_test_indices[t]].tolist()) == {2 * t, 2 * t + 1}
    rows = np.concatenate([b.features for b in stream.batches])
    assert len(rows) == 200 and len(np.unique(rows, axis=0)) == 200
    assert len(class_incremental_split(ds, ds, 1)) == 10


def test_rotation_hand_case():
    img = np.array([[1.0, 2.0], [3.0, 4.0]])  # a b / c d
    out = img.ravel()[rotation_permutation(2, 2, 1)].reshape(2, 2)
    np.testing.assert_array_equal(out, [[3, 1], [4, 2]])  # c a / d b


def test_rotation_group_properties():
    ident = np.arange(25)
    half = rotation_permutation(5, 5, 2)
    np.testing.assert_array_equal(half[half], ident)
    quarter = rotation_permutation(5, 5, 1)
    composed = ident
    for _ in range(4):
        composed = composed[quarter]
    np.testing.assert_array_equal(composed, ident)


def test_rotated_split(rng):
    ds = Dataset(rng.standard_normal((42, 9)), rng.integers(0, 3, 42), image_shape=(3, 3))
    te = Dataset(rng.standard_normal((10, 9)), rng.integers(0, 3, 10), image_shape=(3, 3))
    stream = rotated_domain_split(ds, te, folds=4, seed=1)
    sizes = [len(b) for b in stream.batches]
    assert sum(sizes) == 42 and max(sizes) - min(sizes) <= 1
    assert len(stream.test_set) == 10
    # undoing each fold's rotation recovers disjoint original rows
    recovered = []
    for k, b in enumerate(stream.batches):
        undone = rotate_images(b, (4 - k) % 4)
        recovered.append(undone.features)
    rec = np.concatenate(recovered)
    assert sorted(map(tuple, rec)) == sorted(map(tuple, ds.features))
    again = rotated_domain_split(ds, te, folds=4, seed=1)
    for a, b in zip(stream.batches, again.batches):
        np.testing.assert_array_equal(a.features, b.features)


def test_rotated_split_needs_image_shape(rng):
    ds = Dataset(rng.standard_normal((8, 4)), np.zeros(8, dtype=int))
    with pytest.raises(ValueError):
        rotated_domain_split(ds, ds)


def test_manifest(tmp_path, rng):
    ds = Dataset(rng.standard_normal((30, 2)), np.arange(30) % 3, 3)
    stream = sorted_taskfree_split(ds, ds, T=3)
    write_manifest(stream, tmp_path / "m.json")
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["kind"] == "sorted" and m["batch_sizes"] == [10, 10, 10]
    assert sum(map(sum, m["class_histograms"])) == 30


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 3], num_classes=2)
    with pytest.raises(ValueError):
        Dataset(np.array([[np.inf]]), [0])
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 5)), [0], image_shape=(2, 2))

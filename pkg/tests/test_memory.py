import numpy as np
import pytest

from gmc.embedding import EmbeddingMatrix, EmbeddingSpec, build_embeddings, local_embeddings, sum_columns
from gmc.errors import IncompatibleEmbeddingError
from gmc.memory import (
    ClassBalanceMemory,
    GmcMemory,
    LocalGmcMemory,
    ReservoirMemory,
    SlidingWindowMemory,
    as_weighted_dataset,
    gmc_update,
    read_snapshot,
    reservoir_update,
    sliding_window_update,
    write_snapshot,
)
from gmc.model import ArchSpec, InitSpec, WeightedDataset, init_params
from gmc.omp import OmpConfig, omp_select

SPEC = EmbeddingSpec(S=1, d=30)


def batch(rng, B, F=3, C=3, start=0):
    X = rng.standard_normal((B, F))
    X[:, 0] = np.arange(start, start + B)  # feature 0 identifies the item
    return WeightedDataset(X, rng.integers(0, C, B))


def columns(rng, B, dim=30, shift=0.3):
    return EmbeddingMatrix(rng.standard_normal((dim, B)) + shift, SPEC, "fixed")


# --- reservoir --------------------------------------------------------------

def test_reservoir_short_stream_keeps_everything(rng):
    mem = ReservoirMemory(10, seed=0).update(batch(rng, 7))
    np.testing.assert_array_equal(mem.features[:, 0], np.arange(7))
    np.testing.assert_array_equal(mem.weights, np.ones(7))


def test_reservoir_size_is_min_of_capacity_and_seen(rng):
    mem = ReservoirMemory(10, seed=1)
    seen = 0
    for B in (3, 4, 5, 9, 1):
        mem = reservoir_update(mem, batch(rng, B, start=seen))
        seen += B
        assert len(mem) == min(10, seen)


def test_reservoir_inclusion_frequency():
    N, n, trials = 100, 10, 4000
    X = np.arange(N, dtype=float)[:, None]
    data = WeightedDataset(X, np.zeros(N, dtype=int))
    hits = np.zeros(N)
    for t in range(trials):
        mem = ReservoirMemory(n, seed=t).update(data)
        hits[mem.features[:, 0].astype(int)] += 1
    sigma = np.sqrt(trials * 0.1 * 0.9)
    assert np.abs(hits - trials * 0.1).max() < 5 * sigma


def test_reservoir_zero_capacity(rng):
    assert len(ReservoirMemory(0).update(batch(rng, 5))) == 0


# --- sliding window ---------------------------------------------------------

def test_sliding_window_examples(rng):
    mem = SlidingWindowMemory(8)
    mem = sliding_window_update(mem, batch(rng, 6, start=0))
    mem = sliding_window_update(mem, batch(rng, 6, start=6))
    np.testing.assert_array_equal(mem.features[:, 0], np.arange(4, 12))
    small = SlidingWindowMemory(8).update(batch(rng, 5))
    np.testing.assert_array_equal(small.features[:, 0], np.arange(5))


def test_sliding_window_matches_queue(rng):
    from collections import deque

    queue = deque(maxlen=13)
    mem = SlidingWindowMemory(13)
    seen = 0
    for B in rng.integers(1, 9, 20):
        b = batch(rng, int(B), start=seen)
        seen += int(B)
        queue.extend(b.features[:, 0])
        mem.update(b)
        np.testing.assert_array_equal(mem.features[:, 0], list(queue))


# --- class balance ----------------------------------------------------------

def test_class_balance_balanced_stream(rng):
    mem = ClassBalanceMemory(12, seed=3)
    for t in range(10):
        X = rng.standard_normal((30, 2))
        mem.update(WeightedDataset(X, rng.permutation(np.repeat(np.arange(4), 30 // 4 + 1))[:30]))
        assert len(mem) <= 12
    counts = mem.class_counts(4)
    assert counts.max() - counts.min() <= 1


def test_class_balance_single_class(rng):
    mem = ClassBalanceMemory(5, seed=0)
    mem.update(WeightedDataset(rng.standard_normal((20, 2)), np.zeros(20, dtype=int)))
    assert len(mem) == 5
    assert mem.class_counts().tolist() == [5]


def test_class_balance_admits_minority(rng):
    mem = ClassBalanceMemory(4, seed=0)
    mem.update(WeightedDataset(rng.standard_normal((4, 2)), np.zeros(4, dtype=int)))
    mem.update(WeightedDataset(rng.standard_normal((2, 2)), np.array([1, 1])))
    assert mem.class_counts(2).tolist() == [2, 2]


# --- gradient matching ------------------------------------------------------

def test_gmc_target_is_running_sum(rng):
    mem = GmcMemory(10, OmpConfig(n=10))
    blocks = []
    for t in range(5):
        G = columns(rng, 15)
        blocks.append(G.columns)
        gmc_update(mem, batch(rng, 15, start=15 * t), G)
    expect = np.zeros(30)
    for cols in blocks:
        for i in range(cols.shape[1]):
            expect += cols[:, i]
    np.testing.assert_array_equal(mem.target, expect)
    np.testing.assert_allclose(mem.target, np.hstack(blocks).sum(axis=1), rtol=1e-12)


def test_gmc_unconstrained_exact_match(rng):
    mem = GmcMemory(100, OmpConfig(n=100, lam=0.0, clip_negative=False))
    for t in range(2):
        mem.update(batch(rng, 10, start=10 * t), columns(rng, 10))
    assert mem.residual_norm <= 1e-8 * np.linalg.norm(mem.target)


def test_gmc_duplicate_batch_no_worse_than_offline(rng):
    b = batch(rng, 20)
    G = columns(rng, 20)
    cfg = OmpConfig(n=5, lam=0.5)
    mem = GmcMemory(5, cfg).update(b, G).update(b, G)
    both = np.hstack([G.columns, G.columns])
    offline = omp_select(both, both.sum(axis=1), cfg)
    assert mem.residual_norm <= offline.residual_norm + 1e-8


def test_gmc_items_follow_selection(rng):
    mem = GmcMemory(6, OmpConfig(n=6))
    pool_x, pool_cols = [], []
    for t in range(3):
        b, G = batch(rng, 10, start=10 * t), columns(rng, 10)
        pool_x.append(b.features)
        pool_cols.append(G.columns)
        mem.update(b, G)
    X, C = np.vstack(pool_x), np.hstack(pool_cols)
    for row, col in zip(mem.features, mem.columns.columns.T):
        i = int(row[0])
        np.testing.assert_array_equal(X[i], row)
        np.testing.assert_array_equal(C[:, i], col)
    assert len(mem) <= 6 and np.all(mem.weights >= 0)


@pytest.mark.parametrize("lam,clip", [(0.0, False), (0.5, True)])
def test_gmc_update_never_worse_than_keeping_old_weights(rng, lam, clip):
    for trial in range(30):
        mem = GmcMemory(8, OmpConfig(n=8, lam=lam, clip_negative=clip))
        mem.update(batch(rng, 20), columns(rng, 20))
        for t in range(3):
            G = columns(rng, 20)
            keep = np.linalg.norm(mem.target + sum_columns(G) - mem.columns.columns @ mem.weights)
            mem.update(batch(rng, 20), G)
            assert mem.residual_norm <= keep + 1e-9


def test_gmc_capacity_above_dictionary_selects_all(rng):
    mem = GmcMemory(50, OmpConfig(n=50, lam=0.0, stop_nonpositive=False))
    mem.update(batch(rng, 7), columns(rng, 7))
    assert len(mem) == 7


def test_gmc_rejects_incompatible_embeddings(rng):
    mem = GmcMemory(5).update(batch(rng, 6), columns(rng, 6))
    other = EmbeddingMatrix(rng.standard_normal((30, 4)), SPEC, "different")
    with pytest.raises(IncompatibleEmbeddingError):
        mem.update(batch(rng, 4), other)
    with pytest.raises(ValueError):
        mem.update(batch(rng, 4), columns(rng, 5))


def test_gmc_with_real_embeddings(rng):
    arch = ArchSpec(3, (5,), 3)
    spec = EmbeddingSpec(S=2, d=12)
    mem = GmcMemory(8, OmpConfig(n=8))
    for t in range(3):
        b = batch(rng, 15, start=15 * t)
        mem.update(b, build_embeddings(b, arch, spec))
    assert len(mem) <= 8
    assert mem.residual_norm < np.linalg.norm(mem.target)


def test_zero_weight_rows_omitted(rng):
    mem = GmcMemory(3)
    mem.features = rng.standard_normal((3, 2))
    mem.labels = np.array([0, 1, 2])
    mem.weights = np.array([1.5, 0.0, 2.0])
    ds = as_weighted_dataset(mem)
    np.testing.assert_array_equal(ds.labels, [0, 2])
    np.testing.assert_array_equal(ds.weights, [1.5, 2.0])
    np.testing.assert_array_equal(ds.features, mem.features[[0, 2]])


def test_baseline_dataset_unit_weights(rng):
    ds = SlidingWindowMemory(5).update(batch(rng, 4)).as_weighted_dataset()
    assert len(ds) == 4 and np.all(ds.weights == 1)


# --- local variant ----------------------------------------------------------

def test_local_first_update_is_offline_omp(rng):
    arch = ArchSpec(3, (5,), 3)
    params = init_params(arch, InitSpec(seed=2))
    b = batch(rng, 20)
    cfg = OmpConfig(n=6)
    mem = LocalGmcMemory(6, cfg, d=25, projection_seed=4).update(b, params)
    G = local_embeddings(params, b, d=25, projection_seed=4)
    res = omp_select(G, sum_columns(G), cfg)
    np.testing.assert_array_equal(mem.features, b.features[res.indices])
    np.testing.assert_array_equal(mem.weights, res.weights)


def test_local_deterministic_and_unconstrained(rng):
    arch = ArchSpec(3, (4,), 2)
    params = init_params(arch, InitSpec(seed=0))
    b1, b2 = batch(rng, 6, C=2), batch(rng, 6, C=2, start=6)
    cfg = OmpConfig(n=12, lam=0.0, clip_negative=False)
    runs = []
    for _ in range(2):
        mem = LocalGmcMemory(12, cfg, d=200).update(b1, params).update(b2, params)
        runs.append(mem)
    np.testing.assert_array_equal(runs[0].weights, runs[1].weights)
    assert runs[0].residual_norm <= 1e-8 * np.linalg.norm(runs[0].target)


# --- snapshots --------------------------------------------------------------

@pytest.mark.parametrize("make", [
    lambda: ReservoirMemory(6, seed=1),
    lambda: SlidingWindowMemory(6),
    lambda: ClassBalanceMemory(6, seed=2),
])
def test_snapshot_round_trip(rng, tmp_path, make):
    mem = make().update(batch(rng, 10))
    path = tmp_path / "m.gmcm"
    write_snapshot(mem, path)
    snap = read_snapshot(path)
    assert (snap.strategy, snap.capacity) == (mem.strategy, 6)
    np.testing.assert_array_equal(snap.features, mem.features)
    np.testing.assert_array_equal(snap.labels, mem.labels)
    np.testing.assert_array_equal(snap.weights, mem.weights)
    assert path.read_bytes()[:4] == b"GMCM"


def test_snapshot_gmc_weights(rng, tmp_path):
    mem = GmcMemory(5).update(batch(rng, 10), columns(rng, 10))
    write_snapshot(mem, tmp_path / "g")
    snap = read_snapshot(tmp_path / "g")
    assert snap.strategy == "gmc"
    np.testing.assert_array_equal(snap.weights, mem.weights)


def test_snapshot_rejects_garbage(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError):
        read_snapshot(p)

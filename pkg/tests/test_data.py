import gzip
import struct

import numpy as np
import pytest
from scipy import stats

from rafl import nn
from rafl.data import (Dataset, color_jitter, distort, load_csv, load_idx, partition, rotate90, synthesize,
                       write_idx)
from rafl.nn import Conv, Flatten, NetworkSpec, SparseBegin, SparseEnd


def test_idx_round_trip(tmp_path):
    imgs = np.arange(4 * 28 * 28, dtype=np.uint8).reshape(4, 28, 28)
    write_idx(tmp_path / "i", tmp_path / "l", imgs, np.array([0, 1, 2, 1]))
    ds = load_idx(tmp_path / "i", tmp_path / "l")
    assert ds.images.shape == (4, 1, 28, 28) and list(ds.labels) == [0, 1, 2, 1]
    assert ds.images.max() <= 1.0 and ds.images[0, 0, 0, 1] == pytest.approx(1 / 255)
    assert (tmp_path / "i").read_bytes()[8:12] == b"\x00\x00\x00\x1c"  # big-endian 28


def test_idx_gzip(tmp_path):
    write_idx(tmp_path / "i", tmp_path / "l", np.zeros((2, 3, 3)), np.array([0, 1]))
    for n in ("i", "l"):
        (tmp_path / f"{n}.gz").write_bytes(gzip.compress((tmp_path / n).read_bytes()))
    assert len(load_idx(tmp_path / "i.gz", tmp_path / "l.gz")) == 2


def test_idx_errors(tmp_path):
    write_idx(tmp_path / "i", tmp_path / "l", np.zeros((3, 2, 2)), np.array([0, 1]))
    with pytest.raises(ValueError, match="count"):
        load_idx(tmp_path / "i", tmp_path / "l")
    with pytest.raises(ValueError, match="magic"):
        load_idx(tmp_path / "l", tmp_path / "i")
    (tmp_path / "bad").write_bytes(struct.pack(">IIII", 0x803, 5, 2, 2) + b"\x00" * 3)
    with pytest.raises(ValueError):
        load_idx(tmp_path / "bad", tmp_path / "l")


def test_csv(tmp_path):
    (tmp_path / "d.csv").write_text("label,p0,p1,p2,p3\n1,0,255,0,0\n0,255,255,255,255\n")
    ds = load_csv(tmp_path / "d.csv", (1, 2, 2))
    assert list(ds.labels) == [1, 0] and ds.images[1].min() == 1.0
    (tmp_path / "bad.csv").write_text("1,0,0\n")
    with pytest.raises(ValueError):
        load_csv(tmp_path / "bad.csv", (1, 2, 2))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1, 2, 2)), np.array([0, 3]), 3)
    with pytest.raises(ValueError):
        Dataset(np.full((1, 1, 2, 2), 1.5), np.array([0]), 1)


def test_synthesize_deterministic_and_balanced():
    a, b = synthesize(5, 20, seed=3), synthesize(5, 20, seed=3)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(np.bincount(a.labels), [20] * 5)
    assert not np.array_equal(a.images, synthesize(5, 20, seed=4).images)


def test_difficulty_zero_is_linearly_separable():
    ds = synthesize(10, 30, difficulty=0.0, seed=1)
    spec = NetworkSpec((SparseBegin(), Conv(10, 16, 16), SparseEnd(), Flatten()), (1, 16, 16))  # linear model
    w = nn.init_weights(spec, np.random.default_rng(0))
    for _ in range(300):
        _, g = nn.loss_and_grads(spec, w, ds.images, ds.labels)
        nn.sgd_step(w, g, 0.5, weight_decay=0.0)
    assert nn.evaluate(spec, w, ds) == 1.0


def test_iid_partition_disjoint_cover():
    ds = synthesize(10, 10, seed=0)
    parts = partition(ds, 10, 10, "iid", seed=1)
    assert sorted(np.concatenate(parts).tolist()) == list(range(100))
    again = partition(ds, 10, 10, "iid", seed=1)
    assert all(np.array_equal(p, q) for p, q in zip(parts, again))
    with pytest.raises(ValueError):
        partition(ds, 11, 10)


def test_non_iid_shards():
    ds = synthesize(10, 40, seed=0)
    parts = partition(ds, 20, 20, "non_iid_shards", seed=2)
    assert len(np.unique(np.concatenate(parts))) == 400
    assert all(len(np.unique(ds.labels[p])) <= 2 for p in parts)
    # per-device label histograms are far from the global one
    glob = np.bincount(ds.labels, minlength=10) / len(ds)
    hist = np.bincount(ds.labels[parts[0]], minlength=10)
    chi = stats.chisquare(hist + 1e-9, glob * 20)
    assert chi.pvalue < 0.01


def test_rotate90_group_and_permutation(rng):
    x = rng.random((2, 1, 5, 5))
    assert np.array_equal(rotate90(rotate90(rotate90(rotate90(x)))), x)
    assert np.array_equal(np.sort(rotate90(x).reshape(-1)), np.sort(x.reshape(-1)))


def test_color_jitter(rng):
    x = rng.random((3, 3, 4, 4))
    assert np.allclose(color_jitter(x, 1.0, 1.0, 1.0), x)
    y = color_jitter(x)
    assert y.shape == x.shape and y.min() >= 0 and y.max() <= 1


def test_distort_kinds():
    gray = synthesize(2, 3, seed=0)
    with pytest.raises(ValueError):
        distort(gray, "color_jitter_half")
    with pytest.raises(ValueError):
        distort(gray, "blur")
    rgb = synthesize(2, 3, seed=0, channels=3)
    assert distort(rgb, "color_jitter_half").images.shape == rgb.images.shape

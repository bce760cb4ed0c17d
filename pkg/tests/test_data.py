import numpy as np
import pytest

from fhe_fedsim import nn


def test_synthetic_dataset_deterministic():
    a = nn.synthetic_dataset(5, 80, 8)
    b = nn.synthetic_dataset(5, 80, 8)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])
    c = nn.synthetic_dataset(6, 80, 8)
    assert not np.array_equal(a[0], c[0])


def test_synthetic_dataset_shape_balance_range():
    x, y = nn.synthetic_dataset(0, 120, 16)
    assert x.shape == (120, 3, 16, 16)
    assert x.dtype == np.float32
    assert np.bincount(y).tolist() == [30, 30, 30, 30]
    assert x.min() >= 0.0 and x.max() <= 1.0


def test_synthetic_dataset_rejects_bad_sizes():
    with pytest.raises(nn.DataError):
        nn.synthetic_dataset(0, 30, 16)  # not divisible by 4
    with pytest.raises(nn.DataError):
        nn.synthetic_dataset(0, 40, 4)  # too small


def test_ftns_roundtrip(tmp_path):
    arr = np.random.default_rng(0).uniform(0, 1, (3, 9, 9)).astype(np.float32)
    path = tmp_path / "img.ftns"
    nn.save_ftns(path, arr)
    back = nn.load_ftns(path)
    assert np.array_equal(back, arr)


def test_load_image_dir(tmp_path):
    rng = np.random.default_rng(1)
    for cls in ("alpha", "beta"):
        (tmp_path / cls).mkdir()
        for i in range(3):
            nn.save_ftns(tmp_path / cls / f"{i}.ftns",
                         rng.uniform(0, 9, (3, 8, 8)).astype(np.float32))
    images, labels, classes = nn.load_image_dir(tmp_path)
    assert classes == ["alpha", "beta"]
    assert images.shape == (6, 3, 8, 8)
    assert labels.tolist() == [0, 0, 0, 1, 1, 1]
    assert images.min() >= 0.0 and images.max() <= 1.0


def test_load_image_dir_grayscale_promotes(tmp_path):
    (tmp_path / "only").mkdir()
    nn.save_ftns(tmp_path / "only" / "a.ftns", np.eye(8, dtype=np.float32))
    images, _, _ = nn.load_image_dir(tmp_path)
    assert images.shape == (1, 3, 8, 8)
    assert np.array_equal(images[0, 0], images[0, 2])


def test_load_image_dir_errors(tmp_path):
    with pytest.raises(nn.DataError):
        nn.load_image_dir(tmp_path / "missing")
    (tmp_path / "empty_class").mkdir()
    with pytest.raises(nn.DataError):
        nn.load_image_dir(tmp_path)
    bad = tmp_path / "empty_class" / "bad.ftns"
    bad.write_bytes(b"NOPE1234")
    with pytest.raises(nn.DataError):
        nn.load_image_dir(tmp_path)


def test_partition_shard_sizes_match_configuration_table():
    # 5,700 samples over 20 clients: 285 each, 257 train / 28 test
    x = np.zeros((5700, 1), dtype=np.float32)
    y = np.zeros(5700, dtype=np.int64)
    part = nn.partition(x, y, 20, np.random.default_rng(0))
    assert len(part.clients) == 20
    for c in part.clients:
        assert len(c.train_labels) == 257
        assert len(c.test_labels) == 28


def test_partition_is_disjoint_and_covers():
    x = np.arange(103, dtype=np.float32).reshape(-1, 1)
    y = np.zeros(103, dtype=np.int64)
    part = nn.partition(x, y, 7, np.random.default_rng(1))
    seen = np.concatenate([np.concatenate([c.train_images, c.test_images])
                           for c in part.clients]).ravel()
    assert sorted(seen.tolist()) == list(range(103))


def test_partition_deterministic_and_guards():
    x = np.arange(40, dtype=np.float32).reshape(-1, 1)
    y = np.zeros(40, dtype=np.int64)
    a = nn.partition(x, y, 4, np.random.default_rng(9))
    b = nn.partition(x, y, 4, np.random.default_rng(9))
    for ca, cb in zip(a.clients, b.clients):
        assert np.array_equal(ca.train_images, cb.train_images)
    with pytest.raises(nn.DataError):
        nn.partition(x[:3], y[:3], 4, np.random.default_rng(0))


def test_partition_carries_holdout():
    x = np.zeros((20, 1), dtype=np.float32)
    y = np.zeros(20, dtype=np.int64)
    hx = np.ones((5, 1), dtype=np.float32)
    hy = np.ones(5, dtype=np.int64)
    part = nn.partition(x, y, 2, np.random.default_rng(0), holdout=(hx, hy))
    assert np.array_equal(part.holdout_images, hx)
    assert np.array_equal(part.holdout_labels, hy)

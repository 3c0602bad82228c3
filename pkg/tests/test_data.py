import os
import struct

import numpy as np
import pytest

from quenchlab.data import gen_synthetic, load_idx, read_idx_images, write_idx
from quenchlab.errors import (IdxBadMagicError, IdxCountMismatchError, IdxTruncatedError,
                              InvalidParameterError)


def test_synthetic_deterministic():
    a = gen_synthetic(50, 4, "random_labels", 3)
    b = gen_synthetic(50, 4, "random_labels", 3)
    assert a.features.tobytes() == b.features.tobytes()
    assert np.array_equal(a.labels, b.labels)
    assert a.features.min() >= 0 and a.features.max() <= 1


def test_separable_by_own_hyperplane():
    train = gen_synthetic(500, 32, "separable", 9)
    test = gen_synthetic(200, 32, "separable", 9, split="test")
    for d in (train, test):
        normal, offset = train.hyperplane
        pred = (d.features @ normal - offset > 0).astype(int)
        assert np.all(pred == d.labels)
    assert 0.2 < train.labels.mean() < 0.8


@pytest.mark.parametrize("seed", range(5))
def test_random_labels_balanced(seed):
    d = gen_synthetic(10_000, 32, "random_labels", seed)
    assert 0.45 <= d.labels.mean() <= 0.55


def test_synthetic_rejects_bad_sizes():
    with pytest.raises(InvalidParameterError):
        gen_synthetic(1, 3, "separable", 0)
    with pytest.raises(InvalidParameterError):
        gen_synthetic(10, 0, "separable", 0)
    with pytest.raises(InvalidParameterError):
        gen_synthetic(10, 3, "spirals", 0)


def idx_bytes(images, labels, img_magic=0x803, lbl_magic=0x801):
    n, r, c = images.shape
    img = struct.pack(">IIII", img_magic, n, r, c) + images.astype(np.uint8).tobytes()
    lbl = struct.pack(">II", lbl_magic, len(labels)) + bytes(labels)
    return img, lbl


def write_pair(tmp_path, img, lbl):
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    ip.write_bytes(img)
    lp.write_bytes(lbl)
    return ip, lp


def test_handcrafted_idx(tmp_path):
    images = np.array([[[0, 255, 0], [255, 0, 255], [0, 0, 0]],
                       [[255, 255, 255], [0, 0, 0], [255, 0, 0]]], dtype=np.uint8)
    ip, lp = write_pair(tmp_path, *idx_bytes(images, [3, 8]))
    d = load_idx(ip, lp)
    assert d.features.shape == (2, 9)
    assert d.features.dtype == np.float64
    np.testing.assert_array_equal(d.features, images.reshape(2, 9) / 255.0)
    assert set(np.unique(d.features)) == {0.0, 1.0}
    np.testing.assert_array_equal(d.labels, [3, 8])
    np.testing.assert_array_equal(d.parity().labels, [1, 0])


def test_bad_magic(tmp_path):
    images = np.zeros((2, 3, 3), dtype=np.uint8)
    ip, lp = write_pair(tmp_path, *idx_bytes(images, [1, 2], img_magic=0x804))
    with pytest.raises(IdxBadMagicError) as info:
        load_idx(ip, lp)
    assert info.value.offset == 0 and str(ip) in str(info.value)
    ip, lp = write_pair(tmp_path, *idx_bytes(images, [1, 2], lbl_magic=0x803))
    with pytest.raises(IdxBadMagicError):
        load_idx(ip, lp)


def test_truncated(tmp_path):
    images = np.zeros((2, 3, 3), dtype=np.uint8)
    img, lbl = idx_bytes(images, [1, 2])
    ip, lp = write_pair(tmp_path, img[:-1], lbl)
    with pytest.raises(IdxTruncatedError) as info:
        load_idx(ip, lp)
    assert info.value.offset == len(img) - 1
    ip, lp = write_pair(tmp_path, img[:10], lbl)
    with pytest.raises(IdxTruncatedError):
        load_idx(ip, lp)
    ip, lp = write_pair(tmp_path, img, lbl[:-1])
    with pytest.raises(IdxTruncatedError):
        load_idx(ip, lp)


def test_count_mismatch(tmp_path):
    images = np.zeros((2, 3, 3), dtype=np.uint8)
    ip, lp = write_pair(tmp_path, *idx_bytes(images, [1, 2, 3]))
    with pytest.raises(IdxCountMismatchError):
        load_idx(ip, lp)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError) as info:
        load_idx(tmp_path / "nope.idx", tmp_path / "nope2.idx")
    assert "nope.idx" in str(info.value.filename)


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(6, 4, 5), dtype=np.uint8)
    labels = rng.integers(0, 10, size=6)
    ip, lp = tmp_path / "a", tmp_path / "b"
    write_idx(raw.reshape(6, -1) / 255.0, labels, ip, lp, shape=(4, 5))
    d = load_idx(ip, lp)
    np.testing.assert_array_equal(read_idx_images(ip), raw)
    write_idx(d.features, d.labels, tmp_path / "c", tmp_path / "d", shape=(4, 5))
    d2 = load_idx(tmp_path / "c", tmp_path / "d")
    assert d2.features.tobytes() == d.features.tobytes()
    np.testing.assert_array_equal(d2.labels, labels)


MNIST_DIR = os.environ.get("MNIST_DIR")


@pytest.mark.skipif(not MNIST_DIR, reason="set MNIST_DIR to the directory holding the MNIST IDX files")
def test_real_mnist_train_files():
    d = load_idx(os.path.join(MNIST_DIR, "train-images-idx3-ubyte"),
                 os.path.join(MNIST_DIR, "train-labels-idx1-ubyte"))
    assert d.features.shape == (60_000, 784)
    assert d.features.min() >= 0 and d.features.max() <= 1

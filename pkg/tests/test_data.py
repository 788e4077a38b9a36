import gzip
import struct

import numpy as np
import pytest

from sll.data import (MNIST_MEAN, MNIST_STD, _cifar_records, augment_batch, augment_crop,
                      augment_flip, builtin_dataset, load_cifar10_binary, load_cifar100_binary,
                      load_dataset, load_mnist_idx, synthetic_blobs)
from sll.exceptions import FormatError, InvalidInputError
from sll.numerics import make_rng


def _write_idx(path, magic, arr, gz=False):
    data = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in arr.shape)
    data += arr.astype(np.uint8).tobytes()
    opener = gzip.open if gz else open
    with opener(path, "wb") as fh:
        fh.write(data)


@pytest.fixture
def mnist_files(tmp_path):
    rng = make_rng(0)
    imgs = rng.integers(0, 256, size=(5, 4, 3), dtype=np.uint8)
    labels = np.array([0, 9, 3, 3, 1], dtype=np.uint8)
    _write_idx(tmp_path / "img", 0x803, imgs)
    _write_idx(tmp_path / "lab.gz", 0x801, labels, gz=True)
    return tmp_path / "img", tmp_path / "lab.gz", imgs, labels


def test_mnist_roundtrip(mnist_files):
    ip, lp, imgs, labels = mnist_files
    ds = load_mnist_idx(ip, lp)
    assert ds.images.shape == (5, 12) and ds.image_shape == (1, 4, 3)
    np.testing.assert_array_equal(ds.labels, labels)
    np.testing.assert_allclose(ds.images[0], (imgs[0].ravel() / 255.0 - MNIST_MEAN) / MNIST_STD)
    again = load_mnist_idx(ip, lp)
    assert again.images.tobytes() == ds.images.tobytes()


def test_mnist_bad_magic(tmp_path, mnist_files):
    ip, lp, imgs, _ = mnist_files
    _write_idx(tmp_path / "bad", 0x801, imgs)
    with pytest.raises(FormatError, match="magic"):
        load_mnist_idx(tmp_path / "bad", lp)


def test_mnist_truncated(tmp_path, mnist_files):
    ip, lp, _, _ = mnist_files
    raw = open(ip, "rb").read()
    (tmp_path / "short").write_bytes(raw[:-7])
    with pytest.raises(FormatError, match="truncated"):
        load_mnist_idx(tmp_path / "short", lp)
    (tmp_path / "tiny").write_bytes(raw[:6])
    with pytest.raises(FormatError):
        load_mnist_idx(tmp_path / "tiny", lp)


def test_mnist_count_mismatch(tmp_path, mnist_files):
    ip, _, _, _ = mnist_files
    _write_idx(tmp_path / "lab4", 0x801, np.zeros(4, dtype=np.uint8))
    with pytest.raises(FormatError):
        load_mnist_idx(ip, tmp_path / "lab4")


def test_cifar_record_layout(tmp_path):
    recs = np.zeros((3, 3073), dtype=np.uint8)
    recs[:, 0] = [4, 0, 9]
    recs[1, 1:] = 255
    (tmp_path / "b.bin").write_bytes(recs.tobytes())
    pix, lab = _cifar_records(tmp_path / "b.bin", 1, 0)
    np.testing.assert_array_equal(lab, [4, 0, 9])
    assert pix.shape == (3, 3072) and pix[1].min() == 255


def test_cifar10_wrong_record_count(tmp_path):
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)]:
        (tmp_path / name).write_bytes(np.zeros((2, 3073), dtype=np.uint8).tobytes())
    with pytest.raises(FormatError):
        load_cifar10_binary(tmp_path, "train")


def test_cifar_partial_record(tmp_path):
    (tmp_path / "test.bin").write_bytes(b"\0" * 3074 * 2 + b"\0" * 5)
    with pytest.raises(FormatError, match="offset"):
        load_cifar100_binary(tmp_path, "test")


def test_cifar100_fine_labels_and_channels(tmp_path):
    recs = np.zeros((2, 3074), dtype=np.uint8)
    recs[:, 0] = [3, 7]
    recs[:, 1] = [42, 99]
    recs[0, 2:2 + 1024] = 255
    (tmp_path / "test.bin").write_bytes(recs.tobytes())
    ds = load_cifar100_binary(tmp_path, "test")
    np.testing.assert_array_equal(ds.labels, [42, 99])
    assert ds.num_classes == 100 and ds.image_shape == (3, 32, 32)
    assert np.all(np.isfinite(ds.images))
    assert ds.images[0, 0] > ds.images[1, 0]
    assert ds.images[0, 1024] == ds.images[1, 1024]


def test_missing_root(monkeypatch):
    monkeypatch.delenv("SLL_DATA_ROOT", raising=False)
    with pytest.raises(FileNotFoundError):
        load_dataset("mnist", "train")
    with pytest.raises(InvalidInputError):
        load_dataset("svhn", "train", root="/tmp")


def test_builtin_digits_split():
    tr, te = builtin_dataset("digits", "train"), builtin_dataset("digits", "test")
    assert len(tr) + len(te) == 1797
    assert np.all(np.isfinite(tr.images))


def test_blobs_far_centres_linearly_separable():
    from sklearn.linear_model import LogisticRegression
    ds = synthetic_blobs(2, 100, 2, 0.5, make_rng(0), separation=10.0)
    assert LogisticRegression().fit(ds.images, ds.labels).score(ds.images, ds.labels) == 1.0


def test_blobs_seed_determinism():
    a = synthetic_blobs(3, 10, 4, 1.0, make_rng(5))
    b = synthetic_blobs(3, 10, 4, 1.0, make_rng(5))
    assert a.images.tobytes() == b.images.tobytes()


def test_shuffled_labels_give_chance():
    from sklearn.linear_model import LogisticRegression
    rng = make_rng(1)
    tr = synthetic_blobs(4, 500, 2, 0.5, rng)
    te = synthetic_blobs(4, 500, 2, 0.5, make_rng(1))
    y = rng.permutation(tr.labels)
    acc = LogisticRegression().fit(tr.images, y).score(te.images, te.labels)
    assert abs(acc - 0.25) < 0.1


def test_flip_and_crop(rng):
    x = rng.standard_normal((2, 3 * 4 * 5))
    f = augment_flip(x, rng, (3, 4, 5), force=True)
    np.testing.assert_array_equal(f.reshape(2, 3, 4, 5), x.reshape(2, 3, 4, 5)[..., ::-1])
    np.testing.assert_array_equal(augment_flip(x, rng, (3, 4, 5), force=False), x)
    c = augment_crop(x, rng, (3, 4, 5), pad=0)
    np.testing.assert_array_equal(c, x)
    with pytest.raises(InvalidInputError):
        augment_batch(x, (3, 4, 4), ("flip",), rng)

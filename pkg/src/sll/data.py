"""Dataset loaders (MNIST IDX, CIFAR binary), augmentation and synthetic data.

The loaders never download anything. Point ``SLL_DATA_ROOT`` (or ``--data-root``)
at a directory laid out as::

    mnist/train-images-idx3-ubyte[.gz]   mnist/train-labels-idx1-ubyte[.gz]
    mnist/t10k-images-idx3-ubyte[.gz]    mnist/t10k-labels-idx1-ubyte[.gz]
    cifar-10-batches-bin/data_batch_{1..5}.bin, test_batch.bin
    cifar-100-binary/train.bin, test.bin
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import FormatError, InvalidInputError

MNIST_MEAN, MNIST_STD = 0.1307, 0.3081
CIFAR10_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR10_STD = (0.2470, 0.2435, 0.2616)
CIFAR100_MEAN = (0.5071, 0.4865, 0.4409)
CIFAR100_STD = (0.2673, 0.2564, 0.2762)

DATA_ROOT_ENV = "SLL_DATA_ROOT"


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str
    image_shape: tuple | None = None

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise InvalidInputError("images and labels disagree on sample count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.images.shape[0]


def _read(path) -> bytes:
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = _read(path)
    if len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: file too short for an IDX header", len(raw))
    (m,) = struct.unpack_from(">I", raw, 0)
    if m != magic:
        raise FormatError(f"{path}: bad magic 0x{m:08x}, expected 0x{magic:08x}", 0)
    dims = struct.unpack_from(">" + "I" * ndim, raw, 4)
    start = 4 + 4 * ndim
    need = int(np.prod(dims))
    if len(raw) - start < need:
        raise FormatError(f"{path}: truncated, expected {need} data bytes, "
                          f"found {len(raw) - start}", len(raw))
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=start).reshape(dims)


def load_mnist_idx(images_path, labels_path, mean: float = MNIST_MEAN,
                   std: float = MNIST_STD, name: str = "mnist") -> Dataset:
    images = _read_idx(images_path, 0x00000803, 3)
    labels = _read_idx(labels_path, 0x00000801, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images_path} has {images.shape[0]} images but {labels_path} "
                          f"has {labels.shape[0]} labels", 4)
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    x = (x - mean) / std
    h, w = images.shape[1:]
    return Dataset(x, labels.astype(np.int64), 10, name, (1, h, w))


def _cifar_records(path, label_bytes: int, label_index: int):
    raw = _read(path)
    rec = label_bytes + 3072
    if len(raw) == 0 or len(raw) % rec:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of the "
                          f"{rec}-byte record length", len(raw) - len(raw) % rec)
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    return arr[:, label_bytes:], arr[:, label_index].astype(np.int64)


def _standardize_channels(pixels: np.ndarray, mean, std) -> np.ndarray:
    x = pixels.astype(np.float64).reshape(-1, 3, 1024) / 255.0
    x = (x - np.asarray(mean)[:, None]) / np.asarray(std)[:, None]
    return x.reshape(-1, 3072)


def load_cifar10_binary(directory, split: str = "train", mean=CIFAR10_MEAN,
                        std=CIFAR10_STD) -> Dataset:
    if split == "train":
        files = [f"data_batch_{i}.bin" for i in range(1, 6)]
    elif split == "test":
        files = ["test_batch.bin"]
    else:
        raise InvalidInputError(f"unknown split {split!r}")
    pix, lab = [], []
    for f in files:
        p, l = _cifar_records(os.path.join(directory, f), 1, 0)
        if p.shape[0] != 10000:
            raise FormatError(f"{f}: expected 10000 records, found {p.shape[0]}")
        pix.append(p)
        lab.append(l)
    x = _standardize_channels(np.concatenate(pix), mean, std)
    return Dataset(x, np.concatenate(lab), 10, f"cifar10-{split}", (3, 32, 32))


def load_cifar100_binary(directory, split: str = "train", mean=CIFAR100_MEAN,
                         std=CIFAR100_STD) -> Dataset:
    if split not in ("train", "test"):
        raise InvalidInputError(f"unknown split {split!r}")
    # record: coarse label, fine label, 3072 pixels
    p, l = _cifar_records(os.path.join(directory, f"{split}.bin"), 2, 1)
    return Dataset(_standardize_channels(p, mean, std), l, 100, f"cifar100-{split}",
                   (3, 32, 32))


def data_root(explicit=None) -> str | None:
    return explicit or os.environ.get(DATA_ROOT_ENV)


def _find(root, *names):
    for n in names:
        for cand in (n, n + ".gz"):
            p = os.path.join(root, cand)
            if os.path.exists(p):
                return p
    raise FileNotFoundError(f"none of {names} found under {root}")


def load_dataset(name: str, split: str, root=None) -> Dataset:
    """Load a named dataset split from the data root."""
    root = data_root(root)
    if name in ("blobs", "digits"):
        return builtin_dataset(name, split)
    if root is None:
        raise FileNotFoundError(f"no data root given; set {DATA_ROOT_ENV} or pass --data-root")
    if name == "mnist":
        prefix = "train" if split == "train" else "t10k"
        d = os.path.join(root, "mnist")
        return load_mnist_idx(_find(d, f"{prefix}-images-idx3-ubyte", f"{prefix}-images.idx3-ubyte"),
                              _find(d, f"{prefix}-labels-idx1-ubyte", f"{prefix}-labels.idx1-ubyte"),
                              name=f"mnist-{split}")
    if name == "cifar10":
        return load_cifar10_binary(os.path.join(root, "cifar-10-batches-bin"), split)
    if name == "cifar100":
        return load_cifar100_binary(os.path.join(root, "cifar-100-binary"), split)
    raise InvalidInputError(f"unknown dataset {name!r}")


def builtin_dataset(name: str, split: str, seed: int = 0) -> Dataset:
    """Small datasets that need no files: 4-class 2-D blobs, or scikit-learn's
    8x8 digits (stratified 75/25 split)."""
    if name == "blobs":
        full = synthetic_blobs(4, 250, 2, 0.5, np.random.default_rng(seed))
    elif name == "digits":
        from sklearn.datasets import load_digits
        d = load_digits()
        x = d.data / 16.0
        x = (x - x.mean(axis=0)) / (x.std(axis=0) + 1e-8)
        full = Dataset(x, d.target.astype(np.int64), 10, "digits", (1, 8, 8))
    else:
        raise InvalidInputError(f"unknown builtin dataset {name!r}")
    from sklearn.model_selection import train_test_split
    idx_tr, idx_te = train_test_split(np.arange(len(full)), test_size=0.25,
                                      random_state=seed, stratify=full.labels)
    idx = idx_tr if split == "train" else idx_te
    return Dataset(full.images[idx], full.labels[idx], full.num_classes,
                   f"{name}-{split}", full.image_shape)


def augment_flip(batch, rng: np.random.Generator, image_shape, force: bool | None = None):
    """Flip each image left-right with probability 0.5 (always / never when
    ``force`` is True / False)."""
    batch = np.asarray(batch)
    C, H, W = image_shape
    if int(np.prod(batch.shape[1:])) != C * H * W:
        raise InvalidInputError(f"cannot view samples of shape {batch.shape[1:]} as {image_shape}")
    imgs = batch.reshape(batch.shape[0], C, H, W)
    if force is None:
        flip = rng.random(batch.shape[0]) < 0.5
    else:
        flip = np.full(batch.shape[0], bool(force))
    out = imgs.copy()
    out[flip] = imgs[flip][..., ::-1]
    return out.reshape(batch.shape)


def augment_crop(batch, rng: np.random.Generator, image_shape, pad: int = 4):
    """Zero-pad by ``pad`` and take a random crop of the original size."""
    C, H, W = image_shape
    imgs = np.asarray(batch).reshape(-1, C, H, W)
    padded = np.pad(imgs, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oy = rng.integers(0, 2 * pad + 1, size=imgs.shape[0])
    ox = rng.integers(0, 2 * pad + 1, size=imgs.shape[0])
    out = np.empty_like(imgs)
    for i in range(imgs.shape[0]):
        out[i] = padded[i, :, oy[i]:oy[i] + H, ox[i]:ox[i] + W]
    return out.reshape(np.shape(batch))


def augment_batch(batch, image_shape, kinds, rng):
    if image_shape is None or int(np.prod(image_shape)) != int(np.prod(np.shape(batch)[1:])):
        raise InvalidInputError(f"cannot view batch of shape {np.shape(batch)} as images "
                                f"of shape {image_shape}")
    if "crop" in kinds:
        batch = augment_crop(batch, rng, image_shape)
    if "flip" in kinds:
        batch = augment_flip(batch, rng, image_shape)
    return batch


def synthetic_blobs(k: int, n_per: int, d: int, spread: float,
                    rng: np.random.Generator, separation: float = 5.0) -> Dataset:
    """Isotropic Gaussian clusters around random centres drawn from
    ``N(0, separation^2)``."""
    if k < 2 or d < 2:
        raise InvalidInputError("synthetic_blobs needs k >= 2 and d >= 2")
    centers = rng.normal(0.0, separation, size=(k, d))
    labels = np.repeat(np.arange(k), n_per)
    x = centers[labels] + rng.normal(0.0, spread, size=(k * n_per, d))
    perm = rng.permutation(k * n_per)
    return Dataset(x[perm], labels[perm].astype(np.int64), k, "blobs")

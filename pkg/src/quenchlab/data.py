"""Datasets: a seeded synthetic generator and a reader/writer for the IDX format used by MNIST."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import (IdxBadMagicError, IdxCountMismatchError, IdxTruncatedError,
                     InvalidParameterError)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"
    n_classes: int = 2
    hyperplane: Optional[tuple] = None  # (normal, offset) for separable synthetic sets

    def __post_init__(self):
        if self.features.ndim != 2:
            raise InvalidParameterError("features must be an (n_samples, dim) matrix")
        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidParameterError(
                f"{self.features.shape[0]} samples but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InvalidParameterError(f"labels outside [0, {self.n_classes - 1}]")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def parity(self) -> "Dataset":
        """Binary even(0)/odd(1) relabelling of a digit dataset."""
        return Dataset(self.features, (self.labels % 2).astype(np.int64), self.split, 2)


def gen_synthetic(n: int, dim: int, mode: Literal["separable", "random_labels"], seed: int,
                  split: str = "train") -> Dataset:
    """Features are i.i.d. N(0,1) clipped to [-3, 3] and mapped to [0, 1].

    ``separable`` labels are the side of a random hyperplane through the centre
    of the cube; the hyperplane depends on ``seed`` only, so train and test
    splits drawn with the same seed share it.  ``random_labels`` are fair coins.
    """
    if n < 2 or dim < 1:
        raise InvalidParameterError(f"need n >= 2 and dim >= 1, got n={n}, dim={dim}")
    if mode not in ("separable", "random_labels"):
        raise InvalidParameterError(f"unknown synthetic mode {mode!r}")
    split_key = {"train": 0, "test": 1}.get(split)
    if split_key is None:
        raise InvalidParameterError(f"split must be 'train' or 'test', got {split!r}")
    rng = np.random.default_rng([seed, split_key])
    z = np.clip(rng.standard_normal((n, dim)), -3.0, 3.0)
    X = (z + 3.0) / 6.0
    if mode == "separable":
        normal = np.random.default_rng([seed, 2]).standard_normal(dim)
        offset = 0.5 * normal.sum()
        y = (X @ normal - offset > 0).astype(np.int64)
        return Dataset(X, y, split, 2, (normal, offset))
    y = rng.integers(0, 2, size=n, dtype=np.int64)
    return Dataset(X, y, split, 2)


def _read_header(buf: bytes, path, magic: int, ndim: int) -> tuple[int, ...]:
    if len(buf) < 4:
        raise IdxTruncatedError("file too short for magic number", path, len(buf))
    (got,) = struct.unpack(">I", buf[:4])
    if got != magic:
        raise IdxBadMagicError(f"bad magic 0x{got:08x}, expected 0x{magic:08x}", path, 0)
    end = 4 + 4 * ndim
    if len(buf) < end:
        raise IdxTruncatedError("header truncated", path, len(buf))
    return struct.unpack(f">{ndim}I", buf[4:end])


def read_idx_images(path) -> np.ndarray:
    """``(count, rows, cols)`` uint8 array."""
    with open(path, "rb") as f:
        buf = f.read()
    count, rows, cols = _read_header(buf, path, IDX_IMAGES_MAGIC, 3)
    need = 16 + count * rows * cols
    if len(buf) < need:
        raise IdxTruncatedError(f"expected {need} bytes of image data, found {len(buf)}", path, len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    (count,) = _read_header(buf, path, IDX_LABELS_MAGIC, 1)
    need = 8 + count
    if len(buf) < need:
        raise IdxTruncatedError(f"expected {need} bytes of label data, found {len(buf)}", path, len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8)


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Pixels are scaled by 1/255 into float64 features in [0, 1]."""
    for p in (images_path, labels_path):
        if not os.path.exists(p):
            raise FileNotFoundError(2, "IDX file not found", str(p))
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels", labels_path, 4)
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    n_classes = max(10, int(y.max()) + 1) if y.size else 10
    return Dataset(X, y, split, n_classes)


def write_idx(dataset_or_images, labels, images_path, labels_path, shape=None):
    """Write uint8 images and labels as an IDX pair.

    Float features in [0, 1] are mapped back to bytes with ``round(255 x)``;
    ``shape`` gives ``(rows, cols)`` when the features are flat.
    """
    images = np.asarray(dataset_or_images)
    if images.dtype != np.uint8:
        images = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8)
    if images.ndim == 2:
        rows, cols = shape if shape is not None else (1, images.shape[1])
        images = images.reshape(images.shape[0], rows, cols)
    labels = np.asarray(labels).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())

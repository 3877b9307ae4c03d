"""Datasets: IDX ingestion, synthetic Gaussian blobs and minibatching."""
from __future__ import annotations

import gzip
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import IdxFormatError
from .seeding import epoch_permutation, stream_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if len(self.features) != len(self.labels):
            raise ValueError(
                f"feature count {len(self.features)} != label count {len(self.labels)}"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, index, split=None):
        return Dataset(self.features[index], self.labels[index], self.num_classes,
                       split or self.split, dict(self.normalization))

    def head(self, n):
        return self.subset(slice(0, n))


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path, magic):
    """Read an unsigned-byte IDX array, checking the expected magic number."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(f"{path}: wrong magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise IdxFormatError(f"{path}: truncated payload ({len(raw) - header} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path, array):
    """Write a uint8 array as IDX (rank 1 for labels, rank 3 for images)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    payload = struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def load_idx(images_path, labels_path, split="train", num_classes=10, limit=None):
    """Load an IDX image/label pair; pixels are scaled to [0, 1].

    Features have shape (N, 1, rows, cols).
    """
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels"
        )
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    features = images[:, None, :, :].astype(np.float32) / np.float32(255.0)
    return Dataset(features, labels, num_classes, split,
                   {"source": "idx", "scale": 1.0 / 255.0})


def make_synthetic(num_points, num_classes, dim, seed, separation=6.0, sigma=1.0, split="train"):
    """Gaussian class blobs with class means ``separation * sigma`` apart.

    Means are placed on scaled coordinate axes when ``num_classes <= dim``
    and along the first axis otherwise; both layouts are linearly separable
    for large ``separation``.
    """
    if min(num_points, num_classes, dim) < 1:
        raise ValueError("num_points, num_classes and dim must all be >= 1")
    rng = stream_rng(seed, f"synthetic/{split}")
    means = np.zeros((num_classes, dim))
    if num_classes <= dim:
        means[np.arange(num_classes), np.arange(num_classes)] = separation * sigma / np.sqrt(2.0)
    else:
        means[:, 0] = separation * sigma * np.arange(num_classes)
    labels = np.arange(num_points) % num_classes
    rng.shuffle(labels)
    features = means[labels] + sigma * rng.standard_normal((num_points, dim))
    return Dataset(features, labels, num_classes, split,
                   {"source": "synthetic", "separation": separation, "sigma": sigma})


def minibatches(dataset, batch_size, seed, epoch):
    """Yield ``(features, labels)`` batches in a per-epoch shuffled order."""
    order = epoch_permutation(seed, epoch, len(dataset))
    for start in range(0, len(order), batch_size):
        index = order[start:start + batch_size]
        yield dataset.features[index], dataset.labels[index]


def batch_checksum(features, labels):
    """Cheap fingerprint of one minibatch, used to verify paired runs."""
    crc = zlib.crc32(np.ascontiguousarray(features).tobytes())
    return f"{zlib.crc32(np.ascontiguousarray(labels).tobytes(), crc):08x}"

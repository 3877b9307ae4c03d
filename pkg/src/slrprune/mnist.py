"""Offline MNIST subset.

The full MNIST archives cannot be fetched here, so the 5,000-image sample
bundled with ``mlxtend`` (500 images per digit, sorted by digit) is split
per class into 400 training and 100 test images and written as IDX files.
Everything downstream reads the IDX files through :func:`~slrprune.data.load_idx`.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import load_idx, write_idx

FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def export_subset(directory, train_per_class=400):
    """Write the bundled subset as four IDX files under ``directory``.

    Returns:
        ``(n_train, n_test)``.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("exporting the MNIST subset requires the 'mlxtend' package") from exc
    images, labels = mnist_data()
    images = images.reshape(-1, 28, 28).astype(np.uint8)
    labels = labels.astype(np.uint8)
    train_idx, test_idx = [], []
    for digit in range(10):
        members = np.flatnonzero(labels == digit)
        train_idx.append(members[:train_per_class])
        test_idx.append(members[train_per_class:])
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, index in (("train", np.concatenate(train_idx)), ("test", np.concatenate(test_idx))):
        img_name, lbl_name = FILES[split]
        write_idx(directory / img_name, images[index])
        write_idx(directory / lbl_name, labels[index])
    return sum(map(len, train_idx)), sum(map(len, test_idx))


def load_mnist(directory, split="train", limit=None):
    """Load a split from ``directory``, exporting the subset first if absent."""
    directory = Path(directory)
    img_name, lbl_name = FILES[split]
    if not (directory / img_name).exists() or not (directory / lbl_name).exists():
        export_subset(directory)
    return load_idx(directory / img_name, directory / lbl_name, split=split, limit=limit)

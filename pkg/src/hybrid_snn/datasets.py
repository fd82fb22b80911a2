"""Readers for the MNIST IDX and CIFAR-10 binary formats.

Both return ``(images, labels)`` with images as float arrays in [0, 1] laid
out as (n, C, H, W) and labels as int64.
"""

from __future__ import annotations

import gzip
import os
import struct

import numpy as np

from .errors import FormatError
from .tensor import get_dtype

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32


def _read(path) -> bytes:
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def read_idx(path) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    data = _read(path)
    if len(data) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    magic = struct.unpack(">I", data[:4])[0]
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    expected = header + int(np.prod(dims))
    if len(data) != expected:
        raise FormatError(f"{path}: truncated IDX file: expected {expected} bytes "
                          f"for shape {dims}, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path=None, num_classes: int = 10):
    """Load an IDX image file and, optionally, its label file.

    Returns ``(images, labels)``; labels is None without a label path.
    """
    raw = read_idx(images_path)
    if raw.ndim != 3:
        raise FormatError(f"{images_path}: expected a 3-d image file, got shape {raw.shape}")
    images = (raw.astype(get_dtype()) / 255.0)[:, None, :, :]
    labels = None
    if labels_path is not None:
        lab = read_idx(labels_path)
        if lab.ndim != 1:
            raise FormatError(f"{labels_path}: expected a 1-d label file")
        if len(lab) != len(images):
            raise FormatError(f"{len(images)} images but {len(lab)} labels")
        if lab.size and lab.max() >= num_classes:
            raise FormatError(f"{labels_path}: label {int(lab.max())} outside [0, {num_classes - 1}]")
        labels = lab.astype(np.int64)
    return images, labels


def load_mnist(directory, split: str = "train"):
    """Load the standard MNIST file pair for ``split`` ('train' or 'test')."""
    prefix = "train" if split == "train" else "t10k"
    paths = []
    for kind in ("images-idx3-ubyte", "labels-idx1-ubyte"):
        base = os.path.join(directory, f"{prefix}-{kind}")
        paths.append(base if os.path.exists(base) or not os.path.exists(base + ".gz") else base + ".gz")
    return load_idx(*paths)


def load_cifar_binary(path):
    """Load one CIFAR-10 binary batch: records of 1 label byte + 3072 pixels."""
    data = _read(path)
    if len(data) % CIFAR_RECORD:
        raise FormatError(f"{path}: length {len(data)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise FormatError(f"{path}: label {int(labels.max())} outside [0, 9]")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(get_dtype()) / 255.0
    return images, labels


def load_dataset(name: str, path, split: str = "train"):
    if name == "mnist":
        return load_mnist(path, split)
    if name == "cifar10":
        if split == "train":
            parts = [load_cifar_binary(os.path.join(path, f"data_batch_{i}.bin")) for i in range(1, 6)]
            return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])
        return load_cifar_binary(os.path.join(path, "test_batch.bin"))
    raise FormatError(f"unknown dataset {name!r} (expected 'mnist' or 'cifar10')")

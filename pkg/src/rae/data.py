"""MNIST IDX parsing, padding and splits, and a synthetic ring dataset."""

from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "IdxError",
    "RawDataset",
    "DatasetSplit",
    "read_idx",
    "write_idx",
    "load_idx",
    "load_mnist",
    "pad_images",
    "pad_and_split",
    "synthetic_manifold",
    "export_csv",
    "DATA_ROOT_ENV",
]

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049
DATA_ROOT_ENV = "RAE_DATA_ROOT"


class IdxError(ValueError):
    """Malformed or inconsistent IDX input."""


def _open(path):
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path, expect_magic: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file (plain or gzip) into a uint8 array."""
    with _open(path) as f:
        buf = f.read()
    if len(buf) < 4:
        raise IdxError(f"{path}: truncated header")
    magic = struct.unpack(">I", buf[:4])[0]
    if expect_magic is not None and magic != expect_magic:
        raise IdxError(f"{path}: magic number {magic}, expected {expect_magic}")
    if magic >> 8 != 0x08:
        raise IdxError(f"{path}: unsupported IDX type in magic {magic:#x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(buf) < head:
        raise IdxError(f"{path}: truncated dimension fields")
    dims = struct.unpack(f">{ndim}I", buf[4:head])
    size = int(np.prod(dims)) if dims else 0
    if len(buf) - head < size:
        raise IdxError(f"{path}: payload has {len(buf) - head} bytes, expected {size}")
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=head).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise TypeError("only unsigned-byte IDX files are supported")
    header = struct.pack(">I", 0x0800 | array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as f:
        f.write(header + np.ascontiguousarray(array).tobytes())


@dataclass
class RawDataset:
    images: np.ndarray  # (n, H, W) float32 in [0, 1]
    labels: np.ndarray | None = None


def load_idx(images_path, labels_path=None) -> RawDataset:
    images = read_idx(images_path, IMAGES_MAGIC)
    if images.ndim != 3:
        raise IdxError(f"{images_path}: expected 3 dimensions, got {images.ndim}")
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path, LABELS_MAGIC)
        if len(labels) != len(images):
            raise IdxError(f"{len(images)} images but {len(labels)} labels")
    return RawDataset(images.astype(np.float32) / 255.0, labels)


def _find(root: Path, stem: str) -> Path:
    for name in (stem, stem.replace("-idx", ".idx"), stem + ".gz",
                 stem.replace("-idx", ".idx") + ".gz"):
        if (root / name).exists():
            return root / name
    raise FileNotFoundError(f"no {stem}[.gz] under {root}")


def load_mnist(root=None) -> tuple[RawDataset, RawDataset]:
    """(train, test) from the standard four files under ``root`` or $RAE_DATA_ROOT."""
    root = Path(root or os.environ.get(DATA_ROOT_ENV, "data/mnist"))
    train = load_idx(_find(root, "train-images-idx3-ubyte"),
                     _find(root, "train-labels-idx1-ubyte"))
    test = load_idx(_find(root, "t10k-images-idx3-ubyte"),
                    _find(root, "t10k-labels-idx1-ubyte"))
    return train, test


@dataclass
class DatasetSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    train_labels: np.ndarray | None = None
    val_labels: np.ndarray | None = None
    test_labels: np.ndarray | None = None
    provenance: str = ""

    @property
    def item_shape(self) -> tuple[int, ...]:
        return self.train.shape[1:]

    def subset(self, n_train=None, n_val=None, n_test=None, seed: int = 0) -> "DatasetSplit":
        """Seeded random subsets of each split (``None`` keeps a split whole)."""
        rng = np.random.default_rng(seed)
        parts = {}
        for name, n in (("train", n_train), ("val", n_val), ("test", n_test)):
            x = getattr(self, name)
            y = getattr(self, f"{name}_labels")
            if n is None or n >= len(x):
                idx = np.arange(len(x))
            else:
                idx = np.sort(rng.permutation(len(x))[:n])
            parts[name] = x[idx]
            parts[f"{name}_labels"] = None if y is None else y[idx]
        return DatasetSplit(**parts, provenance=f"{self.provenance}|subset({n_train},"
                                                  f"{n_val},{n_test},seed={seed})")

    def get(self, name: str) -> np.ndarray:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def pad_images(images: np.ndarray, size: int = 32) -> np.ndarray:
    """Symmetric zero padding of (n, H, W) images to (n, size, size)."""
    n, h, w = images.shape
    if h > size or w > size:
        raise ValueError(f"cannot pad {h}x{w} images to {size}x{size}")
    top, left = (size - h) // 2, (size - w) // 2
    out = np.zeros((n, size, size), dtype=images.dtype)
    out[:, top:top + h, left:left + w] = images
    return out


def pad_and_split(raw: RawDataset, val_count: int = 10000, seed: int = 0,
                  test: RawDataset | None = None, size: int = 32) -> DatasetSplit:
    """Pad to ``size``, shuffle the training set with ``seed`` and carve off validation.

    The test set is padded but keeps its original order.
    """
    n = len(raw.images)
    if not 0 <= val_count < n:
        raise ValueError(f"val_count={val_count} must be in [0, {n})")
    images = pad_images(raw.images, size)
    order = np.random.default_rng(seed).permutation(n)
    val_idx, train_idx = order[:val_count], order[val_count:]
    lab = raw.labels
    if test is not None:
        test_images = pad_images(test.images, size)
        test_labels = test.labels
    else:
        test_images = np.zeros((0, size, size), dtype=images.dtype)
        test_labels = None
    return DatasetSplit(
        train=images[train_idx], val=images[val_idx], test=test_images,
        train_labels=None if lab is None else lab[train_idx],
        val_labels=None if lab is None else lab[val_idx],
        test_labels=test_labels, provenance=f"mnist(pad={size},val={val_count},seed={seed})")


def synthetic_manifold(n: int = 2000, ambient_dim: int = 16, noise_std: float = 0.0,
                       seed: int = 0) -> DatasetSplit:
    """Noisy unit circle pushed through a random linear map, min-max scaled to [0, 1].

    Items have shape (1, ambient_dim) and stay float64; the split is 80/10/10.
    """
    if ambient_dim < 2:
        raise ValueError("ambient_dim must be >= 2")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    A = rng.standard_normal((2, ambient_dim))
    X = ring @ A + noise_std * rng.standard_normal((n, ambient_dim))
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    X = np.clip((X - lo) / span, 0.0, 1.0)[:, None, :]
    n_train, n_val = int(0.8 * n), int(0.1 * n)
    return DatasetSplit(X[:n_train], X[n_train:n_train + n_val], X[n_train + n_val:],
                        provenance=f"synthetic(n={n},dim={ambient_dim},"
                                   f"noise={noise_std},seed={seed})")


def export_csv(path, images: np.ndarray) -> None:
    """One row per item, flattened pixels, with a header row."""
    images = np.asarray(images, dtype=np.float64)
    flat = images.reshape(len(images), int(np.prod(images.shape[1:])))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"p{i}" for i in range(flat.shape[1])])
        for row in flat:
            w.writerow([f"{v:.6g}" for v in row])


def read_csv_matrix(path) -> np.ndarray:
    """Numeric CSV with one header row into an (n, m) float64 array."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    body = [[float(v) for v in r] for r in rows[1:] if r]
    return np.array(body, dtype=np.float64).reshape(len(body), len(rows[0]))

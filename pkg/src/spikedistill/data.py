"""Readers for MNIST-style IDX files and the CIFAR-10 binary release.

IDX: big-endian header ``magic (u32), n (u32)[, rows (u32), cols (u32)]``
followed by raw u8 values; images use magic 0x00000803, labels 0x00000801.

CIFAR-10 binary: each record is 1 label byte + 3072 pixel bytes (1024 red,
1024 green, 1024 blue, each row-major 32x32). Train split is
``data_batch_1.bin`` .. ``data_batch_5.bin``, test split ``test_batch.bin``.

The data root comes from ``$SPIKEDISTILL_DATA`` (default ``~/data``), with
MNIST under ``mnist/`` and CIFAR-10 under ``cifar-10-batches-bin/``.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, UsageError
from .rng import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3 * 32 * 32

NORMALIZATION = {
    "mnist": ((0.1307,), (0.3081,)),
    "cifar10": ((0.4914, 0.4822, 0.4465), (0.2470, 0.2435, 0.2616)),
}

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    images: np.ndarray  # (n, c, h, w) uint8
    labels: np.ndarray  # (n,) uint8
    name: str
    split: str

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_cls(self) -> int:
        return 10

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.name, self.split)


def data_root() -> Path:
    return Path(os.environ.get("SPIKEDISTILL_DATA", "~/data")).expanduser()


def _read_bytes(path) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"data file not found: {p}")
    return p.read_bytes()


def load_idx(path_images, path_labels) -> Dataset:
    raw_i = _read_bytes(path_images)
    raw_l = _read_bytes(path_labels)
    if len(raw_i) < 16:
        raise FormatError(f"{path_images}: header truncated ({len(raw_i)} bytes)")
    if len(raw_l) < 8:
        raise FormatError(f"{path_labels}: header truncated ({len(raw_l)} bytes)")
    magic, n, rows, cols = struct.unpack(">IIII", raw_i[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{path_images}: magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    lmagic, ln = struct.unpack(">II", raw_l[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"{path_labels}: magic 0x{lmagic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(raw_i) != 16 + n * rows * cols:
        raise FormatError(f"{path_images}: payload is {len(raw_i) - 16} bytes, header promises n*rows*cols = {n * rows * cols}")
    if len(raw_l) != 8 + ln:
        raise FormatError(f"{path_labels}: payload is {len(raw_l) - 8} bytes, header count n = {ln}")
    if n != ln:
        raise FormatError(f"count mismatch: images n = {n}, labels n = {ln}")
    images = np.frombuffer(raw_i, dtype=np.uint8, offset=16).reshape(n, 1, rows, cols).copy()
    labels = np.frombuffer(raw_l, dtype=np.uint8, offset=8).copy()
    if labels.size and labels.max() >= 10:
        raise FormatError(f"{path_labels}: label value {labels.max()} >= 10")
    return Dataset(images, labels, "mnist", Path(path_images).name)


def load_cifar_file(path) -> tuple[np.ndarray, np.ndarray]:
    raw = _read_bytes(path)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        raise FormatError(f"{path}: length {len(raw)} is not a positive multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].copy()
    if labels.max() >= 10:
        bad = int(np.argmax(labels >= 10))
        raise FormatError(f"{path}: record {bad} has label byte {labels[bad]} >= 10")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).copy()
    return images, labels


def load_cifar_binary(directory, split: str = "train") -> Dataset:
    d = Path(directory)
    if split == "train":
        files = [d / f"data_batch_{k}.bin" for k in range(1, 6)]
    elif split == "test":
        files = [d / "test_batch.bin"]
    else:
        raise ConfigError(f"unknown split {split!r}")
    parts = [load_cifar_file(f) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return Dataset(images, labels, "cifar10", split)


def load_dataset(name: str, split: str, root=None) -> Dataset:
    root = Path(root) if root else data_root()
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split {split!r}")
    if name == "mnist":
        fi, fl = MNIST_FILES[split]
        ds = load_idx(root / "mnist" / fi, root / "mnist" / fl)
        ds.split = split
        return ds
    if name == "cifar10":
        return load_cifar_binary(root / "cifar-10-batches-bin", split)
    raise ConfigError(f"unknown dataset {name!r}")


def normalize_batch(x: np.ndarray, name: str, dtype=np.float32) -> np.ndarray:
    """uint8 (b, c, h, w) -> float: x/255, then per-channel (x - mean) / std."""
    if name not in NORMALIZATION:
        raise ConfigError(f"no normalization constants for {name!r}")
    mean, std = NORMALIZATION[name]
    m = np.asarray(mean, dtype=dtype).reshape(1, -1, 1, 1)
    s = np.asarray(std, dtype=dtype).reshape(1, -1, 1, 1)
    return ((x.astype(dtype) / dtype(255.0)) - m) / s


def random_crop_flip(x: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """CIFAR-style augmentation on a uint8 batch: padded random crop + h-flip."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, b)
    dx = rng.integers(0, 2 * pad + 1, b)
    flip = rng.random(b) < 0.5
    out = np.empty_like(x)
    for k in range(b):
        crop = xp[k, :, dy[k]:dy[k] + h, dx[k]:dx[k] + w]
        out[k] = crop[:, :, ::-1] if flip[k] else crop
    return out


@dataclass
class BatchPlan:
    batch_size: int
    seed: int
    subset: int | None = None

    def subset_indices(self, n: int) -> np.ndarray:
        """First ``subset`` entries of a seeded permutation; nested for growing k."""
        if self.subset is None or self.subset >= n:
            return np.arange(n)
        perm = stream(self.seed, "subset", n).permutation(n)
        return np.sort(perm[: self.subset])

    def epoch_order(self, n: int, epoch: int) -> np.ndarray:
        return stream(self.seed, "shuffle", epoch).permutation(n)

    def batches(self, n: int, epoch: int | None = None):
        order = np.arange(n) if epoch is None else self.epoch_order(n, epoch)
        for start in range(0, n, self.batch_size):
            yield order[start:start + self.batch_size]

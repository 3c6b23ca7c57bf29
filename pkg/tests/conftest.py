import os
import struct
from pathlib import Path

import numpy as np
import pytest

from spikedistill.config import RunConfig, from_text
from spikedistill.tensor import clear_tape

MNIST_ROOT = Path(os.environ.get("SPIKEDISTILL_DATA", "~/data")).expanduser() / "mnist"
HAVE_MNIST = (MNIST_ROOT / "train-images-idx3-ubyte").is_file()

needs_mnist = pytest.mark.skipif(not HAVE_MNIST, reason=f"MNIST files not found under {MNIST_ROOT}")


@pytest.fixture(autouse=True)
def _fresh_tape():
    clear_tape()
    yield
    clear_tape()


def write_idx(dir_: Path, stem: str, images: np.ndarray, labels: np.ndarray) -> tuple[Path, Path]:
    n, h, w = images.shape
    pi, pl = dir_ / f"{stem}-images-idx3-ubyte", dir_ / f"{stem}-labels-idx1-ubyte"
    pi.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + images.astype(np.uint8).tobytes())
    pl.write_bytes(struct.pack(">II", 0x801, len(labels)) + labels.astype(np.uint8).tobytes())
    return pi, pl


def synthetic_digits(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Learnable 28x28 images: class k lights a 4x4 block at a class-specific spot."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, n).astype(np.uint8)
    images = rng.integers(0, 40, (n, 28, 28)).astype(np.uint8)
    for i, k in enumerate(labels):
        r, c = 4 + 6 * (k // 4), 2 + 6 * (k % 4)
        images[i, r:r + 5, c:c + 5] = 250
    return images, labels


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("data")
    d = root / "mnist"
    d.mkdir()
    xi, yi = synthetic_digits(320, 1)
    xt, yt = synthetic_digits(160, 2)
    write_idx(d, "train", xi, yi)
    write_idx(d, "t10k", xt, yt)
    return root


def tiny_config(root: Path, out: Path, **sections) -> RunConfig:
    base = {
        "data": {"root": str(root)},
        "arch": {"teacher_channels": "4, 8", "student_channels": "4, 4"},
        "run": {"epochs": 2, "batch_size": 32, "seed": 3, "T": 2, "out_dir": str(out)},
    }
    for sec, kv in sections.items():
        base.setdefault(sec, {}).update(kv)
    text = "".join(f"[{s}]\n" + "".join(f"{k} = {v}\n" for k, v in kv.items()) for s, kv in base.items())
    return from_text(text)


@pytest.fixture(scope="session")
def tiny_teacher(tiny_root, tmp_path_factory) -> Path:
    from spikedistill.train import train_teacher

    out = tmp_path_factory.mktemp("teacher")
    train_teacher(tiny_config(tiny_root, out, run={"epochs": 3}))
    return out / "best.ckpt"

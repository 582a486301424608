"""MNIST IDX ingestion and the digit bank used by the MNIST domains."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class DigitBank:
    images: np.ndarray  # (N, 28, 28) uint8
    labels: np.ndarray  # (N,) uint8

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.images[i]


def _read_header(buf: bytes, magic: int, ndim: int, what: str) -> tuple[int, ...]:
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise IdxFormatError(f"{what}: truncated header, {len(buf)} bytes at offset 0 (need {need})")
    got = struct.unpack_from(">I", buf, 0)[0]
    if got != magic:
        raise IdxFormatError(f"{what}: bad magic 0x{got:08x} at offset 0, expected 0x{magic:08x}")
    return struct.unpack_from(">" + "I" * ndim, buf, 4)


def load_mnist_idx(images_bytes: bytes, labels_bytes: bytes) -> DigitBank:
    """Parse big-endian IDX image/label payloads into a :class:`DigitBank`."""
    n, rows, cols = _read_header(images_bytes, IMAGES_MAGIC, 3, "images")
    (nl,) = _read_header(labels_bytes, LABELS_MAGIC, 1, "labels")
    body = n * rows * cols
    if len(images_bytes) < 16 + body:
        raise IdxFormatError(
            f"images: truncated at byte offset {len(images_bytes)}, expected {16 + body} bytes")
    if len(labels_bytes) < 8 + nl:
        raise IdxFormatError(f"labels: truncated at byte offset {len(labels_bytes)}, expected {8 + nl} bytes")
    if nl != n:
        raise IdxFormatError(f"image count {n} does not match label count {nl} (offset 4)")
    images = np.frombuffer(images_bytes, dtype=np.uint8, count=body, offset=16).reshape(n, rows, cols)
    labels = np.frombuffer(labels_bytes, dtype=np.uint8, count=nl, offset=8)
    return DigitBank(images.copy(), labels.copy())


def dump_mnist_idx(bank: DigitBank) -> tuple[bytes, bytes]:
    n, rows, cols = bank.images.shape
    img = struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + bank.images.astype(np.uint8).tobytes()
    lab = struct.pack(">II", LABELS_MAGIC, n) + bank.labels.astype(np.uint8).tobytes()
    return img, lab


def _read_maybe_gz(path: Path) -> bytes:
    data = path.read_bytes()
    return gzip.decompress(data) if data[:2] == b"\x1f\x8b" else data


def read_idx_dir(path) -> DigitBank:
    """Load ``train-images-idx3-ubyte[.gz]`` + labels from a directory (or an images file path)."""
    path = Path(path)
    if path.is_file():
        img_path = path
        lab_path = Path(str(path).replace("images-idx3", "labels-idx1"))
    else:
        cands = sorted(path.glob("*images-idx3-ubyte*"))
        if not cands:
            raise FileNotFoundError(f"no *images-idx3-ubyte* file in {path}")
        img_path = cands[0]
        lab_path = Path(str(img_path).replace("images-idx3", "labels-idx1"))
    return load_mnist_idx(_read_maybe_gz(img_path), _read_maybe_gz(lab_path))


def bundled_digit_bank() -> DigitBank:
    """The 5000-digit MNIST subset shipped inside ``mlxtend`` (optional dependency)."""
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise RuntimeError(
            "MNIST domains need a digit bank: pass --mnist-idx PATH or install mlxtend") from exc
    x, y = mnist_data()
    return DigitBank(np.asarray(x, dtype=np.uint8).reshape(-1, 28, 28), np.asarray(y, dtype=np.uint8))


def resolve_bank(path=None) -> DigitBank:
    return read_idx_dir(path) if path is not None else bundled_digit_bank()

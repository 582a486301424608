"""Split generation and the ``TSD1`` binary dataset format.

File layout (little-endian)::

    b"TSD1"
    u32 version=1, clip_count, frames=20, height=64, width=64, class_count=5
    clip_count x { u8 label, u8 domain, frames*height*width bytes }

A ``<name>.json`` sidecar records the generation grids, seed and counts.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from ..tensor.rng import ALGORITHM, RngState
from .mnist import DigitBank
from .render import VideoClip, render_clip
from .trajectories import (CLASS_NAMES, DOMAIN_NAMES, FRAME_SIZE, FRAMES, GRIDS, DomainId,
                           parse_domain, sample_spec, trajectory_points)

MAGIC = b"TSD1"
VERSION = 1
NUM_CLASSES = 5
ROLES = ("train", "val", "eval")
CANONICAL_COUNTS = {"train": 4000, "val": 1000, "eval": 500}
_HEADER = struct.Struct("<4s6I")


class DatasetFormatError(ValueError):
    pass


@dataclass
class DatasetSplit:
    frames: np.ndarray  # (n, 20, 64, 64) uint8
    labels: np.ndarray  # (n,) uint8
    domains: np.ndarray  # (n,) uint8
    role: str
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def clips(self) -> Iterator[VideoClip]:
        for f, l, d in zip(self.frames, self.labels, self.domains):
            yield VideoClip(f, int(l), int(d))

    def class_counts(self) -> list[int]:
        return np.bincount(self.labels, minlength=NUM_CLASSES).tolist()

    def subset(self, n: int, role: Optional[str] = None) -> "DatasetSplit":
        """First ``n`` clips; labels were interleaved at generation so balance is kept."""
        return DatasetSplit(self.frames[:n], self.labels[:n], self.domains[:n], role or self.role,
                            dict(self.meta, subset=n))


def balanced_labels(n: int, rng: RngState) -> np.ndarray:
    """Shuffled labels with per-class counts differing by at most one.

    Each consecutive block of five is a permutation of the classes, so any
    prefix is also balanced to within one.
    """
    out = np.empty(n, dtype=np.uint8)
    for start in range(0, n, NUM_CLASSES):
        block = rng.permutation(NUM_CLASSES).astype(np.uint8)
        out[start:start + NUM_CLASSES] = block[: n - start]
    return out


def generate_clip(label: int, domain, rng: RngState, bank: Optional[DigitBank]) -> VideoClip:
    spec = sample_spec(label, domain, rng, bank_size=len(bank) if bank is not None else 0)
    return render_clip(spec, trajectory_points(spec), bank)


def generate_role(domain, n: int, seed: int, role: str, bank: Optional[DigitBank] = None) -> DatasetSplit:
    domain = parse_domain(domain)
    role_id = ROLES.index(role)
    labels = balanced_labels(n, RngState(seed, (role_id, 2**32 - 1)))
    frames = np.empty((n, FRAMES, FRAME_SIZE, FRAME_SIZE), dtype=np.uint8)
    for i in range(n):
        clip = generate_clip(int(labels[i]), domain, RngState(seed, (role_id, i)), bank)
        frames[i] = clip.frames
    meta = {"domain": DOMAIN_NAMES[domain], "seed": seed, "role": role, "count": n}
    return DatasetSplit(frames, labels, np.full(n, int(domain), np.uint8), role, meta)


def generate_split(domain, counts: Optional[dict] = None, seed: int = 0,
                   bank: Optional[DigitBank] = None) -> dict[str, DatasetSplit]:
    """Generate the train/val/eval splits for one domain."""
    counts = dict(CANONICAL_COUNTS if counts is None else counts)
    for role in ROLES:
        if counts.get(role, 0) <= 0:
            raise ValueError(f"count for {role!r} must be positive, got {counts.get(role)}")
    domain = parse_domain(domain)
    if domain in (DomainId.MNIST, DomainId.MNIST_BG) and (bank is None or len(bank) == 0):
        raise ValueError(f"domain {DOMAIN_NAMES[domain]} requires an MNIST digit bank")
    return {role: generate_role(domain, counts[role], seed, role, bank) for role in ROLES}


# -- serialisation -----------------------------------------------------------

def iter_tsd_chunks(split: DatasetSplit) -> Iterator[bytes]:
    n = len(split)
    yield _HEADER.pack(MAGIC, VERSION, n, FRAMES, FRAME_SIZE, FRAME_SIZE, NUM_CLASSES)
    for i in range(n):
        yield bytes((int(split.labels[i]), int(split.domains[i])))
        yield np.ascontiguousarray(split.frames[i], dtype=np.uint8).tobytes()


def tsd_digest(split: DatasetSplit) -> str:
    h = hashlib.sha256()
    for chunk in iter_tsd_chunks(split):
        h.update(chunk)
    return h.hexdigest()


def sidecar_dict(split: DatasetSplit) -> dict:
    return {
        "format": "TSD1",
        "version": VERSION,
        "role": split.role,
        "domain": split.meta.get("domain"),
        "seed": split.meta.get("seed"),
        "count": len(split),
        "class_names": CLASS_NAMES,
        "class_counts": split.class_counts(),
        "rng": ALGORITHM,
        "grids": GRIDS,
    }


def write_tsd(path, split: DatasetSplit, sidecar: bool = True) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        for chunk in iter_tsd_chunks(split):
            fh.write(chunk)
    if sidecar:
        side = path.with_suffix(".json")
        side.write_text(json.dumps(sidecar_dict(split), indent=2, sort_keys=True) + "\n")
    return path


def read_tsd(path, role: Optional[str] = None) -> DatasetSplit:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, n, frames, height, width, ncls = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    rec = 2 + frames * height * width
    if len(data) != _HEADER.size + n * rec:
        raise DatasetFormatError(f"{path}: expected {_HEADER.size + n * rec} bytes, found {len(data)}")
    body = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size).reshape(n, rec)
    labels = body[:, 0].copy()
    domains = body[:, 1].copy()
    clips = body[:, 2:].reshape(n, frames, height, width).copy()
    meta = {}
    side = path.with_suffix(".json")
    if side.exists():
        meta = json.loads(side.read_text())
    if "domain" not in meta and n:
        meta["domain"] = DOMAIN_NAMES[DomainId(int(domains[0]))]
    return DatasetSplit(clips, labels, domains, role or meta.get("role", "unknown"), meta)


def split_paths(out: Path, domain) -> dict[str, Path]:
    """Canonical file names for the three splits of ``domain`` inside ``out``."""
    slug = DOMAIN_NAMES[parse_domain(domain)].lower()
    return {role: Path(out) / f"{slug}_{role}.tsd" for role in ROLES}

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..tensor.rng import RngState
from .mnist import DigitBank
from .perlin import perlin_field
from .trajectories import FRAME_SIZE, FRAMES, ClipSpec, DomainId

DOT_SIDE = {DomainId.DOT2: 2, DomainId.DOT5: 5}


@dataclass
class VideoClip:
    frames: np.ndarray  # (20, 64, 64) uint8
    label: int
    domain: int


def _paste_max(frame: np.ndarray, glyph: np.ndarray, top: int, left: int) -> None:
    h, w = glyph.shape
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + h, frame.shape[0]), min(left + w, frame.shape[1])
    if y0 >= y1 or x0 >= x1:
        return
    sub = glyph[y0 - top:y1 - top, x0 - left:x1 - left]
    np.maximum(frame[y0:y1, x0:x1], sub, out=frame[y0:y1, x0:x1])


def digit_glyph(bank: DigitBank, index: int) -> np.ndarray:
    img = bank[index].astype(np.float64)
    peak = img.max()
    if peak <= 0:
        return np.zeros_like(bank[index])
    return np.rint(img * (255.0 / peak)).astype(np.uint8)


def render_clip(spec: ClipSpec, points: np.ndarray, mnist_bank: Optional[DigitBank] = None) -> VideoClip:
    """Composite the moving glyph over the clip background (per-pixel max)."""
    if len(points) != FRAMES:
        raise ValueError(f"expected {FRAMES} points, got {len(points)}")
    domain = DomainId(spec.domain)
    if domain in DOT_SIDE:
        side = DOT_SIDE[domain]
        glyph = np.full((side, side), 255, dtype=np.uint8)
    else:
        if mnist_bank is None or len(mnist_bank) == 0:
            raise ValueError(f"domain {domain.name} requires an MNIST digit bank")
        glyph = digit_glyph(mnist_bank, spec.digit_index)
    if domain is DomainId.MNIST_BG:
        background = perlin_field(FRAME_SIZE, FRAME_SIZE, spec.sigma, RngState(spec.seed, (1,)))
    else:
        background = np.zeros((FRAME_SIZE, FRAME_SIZE), dtype=np.uint8)

    frames = np.empty((FRAMES, FRAME_SIZE, FRAME_SIZE), dtype=np.uint8)
    half = glyph.shape[0] // 2
    rounded = np.floor(np.asarray(points) + 0.5).astype(np.int64)
    for t, (px, py) in enumerate(rounded):
        frames[t] = background
        _paste_max(frames[t], glyph, int(py) - half, int(px) - half)
    return VideoClip(frames, spec.cls, spec.domain)

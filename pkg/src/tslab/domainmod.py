"""Foreground/background compositing transforms for RGB frames.

``s1``: keep the masked foreground, blur everything else.
``s2``: keep the inside of the boxes, blur everything else.
``t``:  keep the background, paint the boxes a constant colour.

Frames are ``H x W x 3`` uint8, masks ``H x W`` bool, boxes ``(x0, y0, x1, y1)``
with exclusive upper bounds.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_SIGMA_BLUR = 9.0
# ImageNet channel means (0.485, 0.456, 0.406) scaled to bytes
IMAGENET_FILL = (124, 116, 104)

Box = tuple[int, int, int, int]


def _check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3 or min(frame.shape[:2]) < 1:
        raise ValueError(f"frame must be H x W x 3 with H, W >= 1, got shape {frame.shape}")
    if frame.dtype != np.uint8:
        raise ValueError(f"frame must be uint8, got {frame.dtype}")
    return frame


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(np.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_axis(img: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    """Correlate along ``axis`` and divide by the kernel mass that fell inside the image."""
    r = len(k) // 2
    n = img.shape[axis]
    moved = np.moveaxis(img, axis, 0)
    acc = np.zeros_like(moved)
    weight = np.zeros(n)
    for j, kj in enumerate(k):
        off = j - r
        lo, hi = max(0, -off), min(n, n - off)
        if lo >= hi:
            continue
        acc[lo:hi] += kj * moved[lo + off:hi + off]
        weight[lo:hi] += kj
    acc /= weight.reshape((-1,) + (1,) * (acc.ndim - 1))
    return np.moveaxis(acc, 0, axis)


def gaussian_blur(frame: np.ndarray, sigma_blur: float = DEFAULT_SIGMA_BLUR) -> np.ndarray:
    """Separable Gaussian blur truncated at 3 sigma, renormalised at the borders."""
    frame = _check_frame(frame)
    if not sigma_blur > 0:
        raise ValueError(f"sigma_blur must be positive, got {sigma_blur}")
    k = gaussian_kernel(sigma_blur)
    out = _blur_axis(_blur_axis(frame.astype(np.float64), k, 0), k, 1)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def validate_boxes(boxes: Iterable[Sequence[int]], height: int, width: int) -> list[Box]:
    out = []
    for b in boxes:
        if len(b) != 4:
            raise ValueError(f"box {b!r} must have four coordinates (x0, y0, x1, y1)")
        x0, y0, x1, y1 = (int(v) for v in b)
        if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
            raise ValueError(f"invalid box {tuple(b)} for a {width}x{height} frame")
        out.append((x0, y0, x1, y1))
    return out


def boxes_mask(boxes: Iterable[Sequence[int]], height: int, width: int) -> np.ndarray:
    """Union of boxes as a boolean mask."""
    mask = np.zeros((height, width), dtype=bool)
    for x0, y0, x1, y1 in validate_boxes(boxes, height, width):
        mask[y0:y1, x0:x1] = True
    return mask


def _check_mask(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != frame.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match frame {frame.shape[:2]}")
    return mask


def s1_compose(frame: np.ndarray, mask: np.ndarray, sigma_blur: float = DEFAULT_SIGMA_BLUR) -> np.ndarray:
    frame = _check_frame(frame)
    mask = _check_mask(frame, mask)
    return np.where(mask[..., None], frame, gaussian_blur(frame, sigma_blur))


def s2_compose(frame: np.ndarray, boxes, sigma_blur: float = DEFAULT_SIGMA_BLUR) -> np.ndarray:
    frame = _check_frame(frame)
    return s1_compose(frame, boxes_mask(boxes, *frame.shape[:2]), sigma_blur)


def t_compose(frame: np.ndarray, boxes, fill: Sequence[int] = IMAGENET_FILL) -> np.ndarray:
    frame = _check_frame(frame)
    if len(fill) != 3 or not all(0 <= int(c) <= 255 for c in fill):
        raise ValueError(f"fill must be three byte values, got {fill!r}")
    out = frame.copy()
    out[boxes_mask(boxes, *frame.shape[:2])] = np.asarray(fill, dtype=np.uint8)
    return out


# -- file I/O --------------------------------------------------------------------

def read_frame(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_frame(path, frame: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(_check_frame(frame), "RGB").save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L")) >= 128


def write_mask(path, mask: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save(path, format="PNG")


def read_boxes(path) -> dict[int, list[Box]]:
    """Boxes JSON: ``{"<frame index>": [[x0, y0, x1, y1], ...], ...}``."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected an object keyed by frame index")
    return {int(k): [tuple(b) for b in v] for k, v in raw.items()}


def write_boxes(path, boxes: dict[int, list]) -> None:
    Path(path).write_text(json.dumps({str(k): [list(b) for b in v] for k, v in sorted(boxes.items())}))

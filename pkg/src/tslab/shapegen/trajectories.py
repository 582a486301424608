"""Trajectory classes, their discrete parameter grids, and point generation.

Positions are glyph centres in pixel coordinates ``(x, y)`` with ``x`` the
column. Every trajectory stays inside ``[LO, HI]`` on both axes so that a
5-px square (the largest dot glyph) rounded to the nearest pixel never leaves
the 64x64 frame. Spirals are the exception handled by reflection: when the
unconstrained spiral would leave the box, its velocity component is mirrored.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from ..tensor.rng import RngState

FRAMES = 20
FRAME_SIZE = 64
LO, HI = 2.0, 61.0


class TrajectoryClass(IntEnum):
    CIRCLE = 0
    LINE = 1
    ARC = 2
    SPIRAL = 3
    RECTANGLE = 4


CLASS_NAMES = [c.name.lower() for c in TrajectoryClass]


class DomainId(IntEnum):
    DOT2 = 0
    DOT5 = 1
    MNIST = 2
    MNIST_BG = 3


DOMAIN_NAMES = {DomainId.DOT2: "2Dot", DomainId.DOT5: "5Dot",
                DomainId.MNIST: "MNIST", DomainId.MNIST_BG: "MNIST-bg"}
_DOMAIN_ALIASES = {"2dot": DomainId.DOT2, "5dot": DomainId.DOT5,
                   "mnist": DomainId.MNIST, "mnist-bg": DomainId.MNIST_BG,
                   "mnist_bg": DomainId.MNIST_BG}


def parse_domain(name) -> DomainId:
    if isinstance(name, DomainId):
        return name
    if isinstance(name, (int, np.integer)):
        return DomainId(int(name))
    key = str(name).strip().lower()
    if key not in _DOMAIN_ALIASES:
        raise ValueError(f"unknown domain {name!r}; expected one of 2dot, 5dot, mnist, mnist-bg")
    return _DOMAIN_ALIASES[key]


def domain_slug(domain) -> str:
    return DOMAIN_NAMES[parse_domain(domain)].lower()


def _evens(lo: int, hi: int, step: int) -> list[int]:
    first = lo + (-lo) % step
    return list(range(first, hi + 1, step))


# Discrete parameter grids. Declared once here and written to every dataset
# sidecar so alternative grids remain identifiable.
GRIDS = {
    "circle": {
        "radius": list(range(8, 23, 2)),
        "center_step": 2,
        "start_angle_deg": [15 * i for i in range(24)],
        "direction": [1, -1],
        "revolutions": [1.0, 1.25, 1.5],
    },
    "line": {
        "start_step": 2,
        "angle_deg": [7.5 * i for i in range(24)],
        "speed_px": [1.5, 2.0, 2.5, 3.0],
        "direction": [1, -1],
    },
    "arc": {
        "radius": list(range(8, 23, 2)),
        "center_step": 2,
        "start_angle_deg": [15 * i for i in range(24)],
        "direction": [1, -1],
        "revolutions": [1.0, 1.25, 1.5],
        "sweep_deg": [60, 90, 120, 150, 180],
    },
    "spiral": {
        "center_step": 4,
        "growth_px_per_rad": [0.6, 0.9, 1.2],
        "start_angle_deg": [30 * i for i in range(12)],
        "direction": [1, -1],
        "total_angle_pi": [2.5, 3.0],
    },
    "rectangle": {
        "corner_step": 4,
        "width": list(range(12, 33, 4)),
        "height": list(range(12, 33, 4)),
        "start_corner": [0, 1, 2, 3],
        "direction": [1, -1],
        "perimeters": [1.0, 1.25, 1.5],
    },
}


def circle_centers(radius: float) -> list[int]:
    """Centre coordinates (per axis) keeping a circle of ``radius`` inside the box."""
    return [c for c in _evens(0, FRAME_SIZE, GRIDS["circle"]["center_step"])
            if c - radius >= LO and c + radius <= HI]


def line_starts() -> list[int]:
    return _evens(int(math.ceil(LO)), int(HI), GRIDS["line"]["start_step"])


def spiral_centers() -> list[int]:
    return [c for c in _evens(0, FRAME_SIZE, GRIDS["spiral"]["center_step"]) if LO <= c <= HI]


def rect_corners(extent: int) -> list[int]:
    return [c for c in _evens(0, FRAME_SIZE, GRIDS["rectangle"]["corner_step"])
            if c >= LO and c + extent <= HI]


@dataclass(frozen=True)
class ClipSpec:
    """Sampled parameters for one clip.

    ``start`` is the centre (circle, arc, spiral), the first point (line) or
    the top-left corner (rectangle). ``size`` is the radius, the rectangle
    width, the spiral growth rate, or 0 for lines; ``aux`` carries the second
    class-specific extent (rectangle height, arc sweep in radians, spiral
    total angle in radians).
    """

    cls: int
    domain: int
    start: tuple[float, float]
    start_angle: float
    direction: int
    size: float
    aux: float
    speed: float
    speed_index: int
    seed: int
    sigma: Optional[float] = None
    digit_index: Optional[int] = None
    corner: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _pick(rng: RngState, values):
    i = int(rng.integers(len(values)))
    return i, values[i]


def _sample_geometry(cls: TrajectoryClass, rng: RngState) -> dict:
    # Rejection sampling over the full product grid: uniform over valid combos.
    while True:
        if cls in (TrajectoryClass.CIRCLE, TrajectoryClass.ARC):
            g = GRIDS[cls.name.lower()]
            _, r = _pick(rng, g["radius"])
            _, cx = _pick(rng, _evens(0, FRAME_SIZE, g["center_step"]))
            _, cy = _pick(rng, _evens(0, FRAME_SIZE, g["center_step"]))
            _, a = _pick(rng, g["start_angle_deg"])
            _, d = _pick(rng, g["direction"])
            si, k = _pick(rng, g["revolutions"])
            sweep = 0.0
            if cls is TrajectoryClass.ARC:
                _, sw = _pick(rng, g["sweep_deg"])
                sweep = math.radians(sw)
            if cx - r < LO or cx + r > HI or cy - r < LO or cy + r > HI:
                continue
            return dict(start=(float(cx), float(cy)), start_angle=math.radians(a), direction=d,
                        size=float(r), aux=sweep, speed=k, speed_index=si)
        if cls is TrajectoryClass.LINE:
            g = GRIDS["line"]
            starts = line_starts()
            _, x0 = _pick(rng, starts)
            _, y0 = _pick(rng, starts)
            _, a = _pick(rng, g["angle_deg"])
            si, v = _pick(rng, g["speed_px"])
            _, d = _pick(rng, g["direction"])
            spec = dict(start=(float(x0), float(y0)), start_angle=math.radians(a), direction=d,
                        size=0.0, aux=0.0, speed=v, speed_index=si)
            if _line_valid(x0, y0, math.radians(a), v, d):
                return spec
            continue
        if cls is TrajectoryClass.SPIRAL:
            g = GRIDS["spiral"]
            _, cx = _pick(rng, spiral_centers())
            _, cy = _pick(rng, spiral_centers())
            _, b = _pick(rng, g["growth_px_per_rad"])
            _, a = _pick(rng, g["start_angle_deg"])
            _, d = _pick(rng, g["direction"])
            si, tot = _pick(rng, g["total_angle_pi"])
            return dict(start=(float(cx), float(cy)), start_angle=math.radians(a), direction=d,
                        size=b, aux=tot * math.pi, speed=tot, speed_index=si)
        if cls is TrajectoryClass.RECTANGLE:
            g = GRIDS["rectangle"]
            _, w = _pick(rng, g["width"])
            _, h = _pick(rng, g["height"])
            _, x0 = _pick(rng, _evens(0, FRAME_SIZE, g["corner_step"]))
            _, y0 = _pick(rng, _evens(0, FRAME_SIZE, g["corner_step"]))
            _, corner = _pick(rng, g["start_corner"])
            _, d = _pick(rng, g["direction"])
            si, k = _pick(rng, g["perimeters"])
            if x0 < LO or x0 + w > HI or y0 < LO or y0 + h > HI:
                continue
            return dict(start=(float(x0), float(y0)), start_angle=0.0, direction=d,
                        size=float(w), aux=float(h), speed=k, speed_index=si, corner=corner)
        raise ValueError(f"unknown class {cls!r}")


def _line_valid(x0, y0, angle, speed, direction) -> bool:
    ex = x0 + direction * speed * (FRAMES - 1) * math.cos(angle)
    ey = y0 + direction * speed * (FRAMES - 1) * math.sin(angle)
    eps = 1e-9
    return LO - eps <= ex <= HI + eps and LO - eps <= ey <= HI + eps


def sample_spec(cls, domain, rng: RngState, *, bank_size: int = 0) -> ClipSpec:
    """Draw a clip specification from the class grid (with replacement)."""
    cls = TrajectoryClass(int(cls))
    domain = parse_domain(domain)
    geo = _sample_geometry(cls, rng)
    sigma = None
    digit = None
    if domain is DomainId.MNIST_BG:
        sigma = float(rng.uniform(1.0, 10.0))
    if domain in (DomainId.MNIST, DomainId.MNIST_BG):
        if bank_size <= 0:
            raise ValueError("MNIST domains need a non-empty digit bank")
        digit = int(rng.integers(bank_size))
    seed = int(rng.integers(2**63))
    return ClipSpec(cls=int(cls), domain=int(domain), seed=seed, sigma=sigma, digit_index=digit, **geo)


def _fold(v: np.ndarray) -> np.ndarray:
    """Mirror coordinates into [LO, HI] (reflection of the velocity at walls)."""
    span = HI - LO
    u = np.mod(v - LO, 2 * span)
    return LO + np.where(u > span, 2 * span - u, u)


def trajectory_points(spec: ClipSpec) -> np.ndarray:
    """The 20 glyph-centre positions of a clip, shape ``(20, 2)`` as ``(x, y)``."""
    t = np.arange(FRAMES, dtype=np.float64)
    cls = TrajectoryClass(spec.cls)
    x0, y0 = spec.start
    if cls is TrajectoryClass.CIRCLE:
        theta = spec.start_angle + spec.direction * spec.speed * 2 * math.pi * t / FRAMES
        pts = np.stack([x0 + spec.size * np.cos(theta), y0 + spec.size * np.sin(theta)], 1)
    elif cls is TrajectoryClass.ARC:
        total = spec.aux * spec.speed
        theta = spec.start_angle + spec.direction * total * t / (FRAMES - 1)
        pts = np.stack([x0 + spec.size * np.cos(theta), y0 + spec.size * np.sin(theta)], 1)
    elif cls is TrajectoryClass.LINE:
        step = spec.direction * spec.speed
        pts = np.stack([x0 + step * t * math.cos(spec.start_angle),
                        y0 + step * t * math.sin(spec.start_angle)], 1)
    elif cls is TrajectoryClass.SPIRAL:
        phi = spec.aux * t / (FRAMES - 1)
        theta = spec.start_angle + spec.direction * phi
        r = spec.size * phi
        raw = np.stack([x0 + r * np.cos(theta), y0 + r * np.sin(theta)], 1)
        pts = _fold(raw)
    elif cls is TrajectoryClass.RECTANGLE:
        pts = _rectangle_points(x0, y0, spec.size, spec.aux, spec.corner, spec.direction, spec.speed)
    else:  # pragma: no cover
        raise ValueError(cls)
    return pts


def _rectangle_points(x0, y0, w, h, corner, direction, perimeters) -> np.ndarray:
    # corners clockwise in image coordinates (y grows downward)
    corners = np.array([[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]], dtype=np.float64)
    order = [(corner + direction * i) % 4 for i in range(5)]
    path = corners[order]
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    perim = cum[-1]
    s = np.mod(perimeters * perim * np.arange(FRAMES) / FRAMES, perim)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, 3)
    frac = (s - cum[idx]) / seg[idx]
    return path[idx] + frac[:, None] * (path[idx + 1] - path[idx])

"""Cardinality of each class's discrete parameter grid.

Counts exclude bounce-induced variation (spirals reflecting off the frame),
so they are lower bounds on the number of distinct clips per class.
"""
from __future__ import annotations

import math

import numpy as np

from .trajectories import (FRAMES, GRIDS, HI, LO, TrajectoryClass, circle_centers, line_starts,
                           rect_corners, spiral_centers)


def _circle_placements() -> int:
    return sum(len(circle_centers(r)) ** 2 for r in GRIDS["circle"]["radius"])


def _line_count() -> int:
    g = GRIDS["line"]
    s = np.asarray(line_starts(), dtype=np.float64)
    ang = np.radians(np.asarray(g["angle_deg"]))
    speeds = np.asarray(g["speed_px"])
    dirs = np.asarray(g["direction"], dtype=np.float64)
    reach = (FRAMES - 1) * dirs[:, None] * speeds[None, :]  # (dir, speed)
    dx = reach[..., None] * np.cos(ang)  # (dir, speed, angle)
    dy = reach[..., None] * np.sin(ang)
    eps = 1e-9
    ok_x = ((s[:, None, None, None] + dx[None]) >= LO - eps) & ((s[:, None, None, None] + dx[None]) <= HI + eps)
    ok_y = ((s[:, None, None, None] + dy[None]) >= LO - eps) & ((s[:, None, None, None] + dy[None]) <= HI + eps)
    # sum over x0, y0 of ok_x * ok_y, per (dir, speed, angle)
    return int((ok_x.sum(0) * ok_y.sum(0)).sum())


def count_variations(cls) -> int:
    cls = TrajectoryClass(int(cls)) if not isinstance(cls, str) else TrajectoryClass[cls.upper()]
    if cls is TrajectoryClass.CIRCLE:
        g = GRIDS["circle"]
        return _circle_placements() * len(g["start_angle_deg"]) * len(g["direction"]) * len(g["revolutions"])
    if cls is TrajectoryClass.ARC:
        g = GRIDS["arc"]
        return (_circle_placements() * len(g["start_angle_deg"]) * len(g["direction"])
                * len(g["revolutions"]) * len(g["sweep_deg"]))
    if cls is TrajectoryClass.LINE:
        return _line_count()
    if cls is TrajectoryClass.SPIRAL:
        g = GRIDS["spiral"]
        return (len(spiral_centers()) ** 2 * len(g["growth_px_per_rad"]) * len(g["start_angle_deg"])
                * len(g["direction"]) * len(g["total_angle_pi"]))
    if cls is TrajectoryClass.RECTANGLE:
        g = GRIDS["rectangle"]
        xs = sum(len(rect_corners(w)) for w in g["width"])
        ys = sum(len(rect_corners(h)) for h in g["height"])
        return xs * ys * len(g["start_corner"]) * len(g["direction"]) * len(g["perimeters"])
    raise ValueError(cls)


def spiral_leakage_estimate(train_per_class: int = 800) -> float:
    """Expected share of spiral val clips whose spec also occurs in train."""
    n = count_variations(TrajectoryClass.SPIRAL)
    return 1.0 - math.pow(1.0 - 1.0 / n, train_per_class)

"""Classic 2D gradient (Perlin) noise on a square lattice."""
from __future__ import annotations

import numpy as np

from ..tensor.rng import RngState


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def perlin_raw(width: int, height: int, sigma: float, rng: RngState) -> np.ndarray:
    """Unnormalised noise sampled at pixel centres; lattice spacing ``sigma`` px."""
    if not 1.0 <= sigma <= 10.0:
        raise ValueError(f"sigma must lie in [1, 10], got {sigma}")
    nx = int(np.ceil(width / sigma)) + 2
    ny = int(np.ceil(height / sigma)) + 2
    angles = rng.uniform(0.0, 2 * np.pi, size=(ny, nx))
    gx, gy = np.cos(angles), np.sin(angles)

    u = (np.arange(width) + 0.5) / sigma
    v = (np.arange(height) + 0.5) / sigma
    uu, vv = np.meshgrid(u, v)
    i0 = np.floor(uu).astype(np.int64)
    j0 = np.floor(vv).astype(np.int64)
    fx = uu - i0
    fy = vv - j0

    def corner(di, dj):
        gi, gj = i0 + di, j0 + dj
        return gx[gj, gi] * (fx - di) + gy[gj, gi] * (fy - dj)

    n00, n10, n01, n11 = corner(0, 0), corner(1, 0), corner(0, 1), corner(1, 1)
    sx, sy = _fade(fx), _fade(fy)
    top = n00 + sx * (n10 - n00)
    bot = n01 + sx * (n11 - n01)
    return top + sy * (bot - top)


def perlin_field(width: int, height: int, sigma: float, rng: RngState) -> np.ndarray:
    """Perlin noise min-max normalised to bytes spanning exactly 0..255."""
    raw = perlin_raw(width, height, sigma, rng)
    lo, hi = raw.min(), raw.max()
    if hi - lo < 1e-12:
        return np.zeros((height, width), dtype=np.uint8)
    return np.rint(255.0 * (raw - lo) / (hi - lo)).astype(np.uint8)

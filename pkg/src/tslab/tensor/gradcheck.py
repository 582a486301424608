"""Central-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def nudge_off_kinks(x: np.ndarray, margin: float = 1e-3, kinks=(0.0,)) -> np.ndarray:
    """Move entries within ``margin`` of a kink away from it (keeps sign where defined).

    Finite differences straddling a relu kink measure the average of the two
    one-sided slopes, so such points are excluded by construction.
    """
    x = np.array(x, dtype=np.float64)
    for k in kinks:
        close = np.abs(x - k) < margin
        x[close] = k + np.where(x[close] >= k, margin, -margin)
    return x


def numeric_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f(Tensor(x.copy())).item()
        flat[i] = old - eps
        down = f(Tensor(x.copy())).item()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    out = f(t)
    out.backward()
    return t.grad if t.grad is not None else np.zeros_like(t.data)


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` must be deterministic (evaluate models in eval mode).
    """
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    return relative_error(analytic_grad(f, x), numeric_grad(f, x, eps))

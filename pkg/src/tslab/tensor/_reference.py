"""Pure-numpy kernels with the same contract as the compiled extension."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def correlate(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid stride-1 correlation of ``xp`` (N,C,T,H,W) with ``w`` (F,C,kt,kh,kw)."""
    if xp.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input has {xp.shape[1]}, kernel expects {w.shape[1]}")
    win = sliding_window_view(xp, w.shape[2:], axis=(2, 3, 4))  # N,C,T,H,W,kt,kh,kw
    out = np.tensordot(win, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))  # N,T,H,W,F
    return np.ascontiguousarray(np.moveaxis(out, 4, 1))


def correlate_weight_grad(xp: np.ndarray, g: np.ndarray, kshape) -> np.ndarray:
    win = sliding_window_view(xp, tuple(kshape), axis=(2, 3, 4))  # N,C,T,H,W,kt,kh,kw
    return np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))  # F,C,kt,kh,kw

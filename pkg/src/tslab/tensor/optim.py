"""SGD with classic momentum: ``v <- m v + g``; ``p <- p - lr v``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(FloatingPointError):
    """Raised when a gradient contains NaN or inf; the run must stop."""


@dataclass
class OptState:
    learning_rate: float
    momentum: float = 0.9
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    @classmethod
    def for_params(cls, params: Sequence[Tensor], learning_rate: float, momentum: float = 0.9) -> "OptState":
        return cls(learning_rate, momentum, [np.zeros_like(p.data) for p in params])


def sgd_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], opt: OptState, names=None) -> None:
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    if not opt.velocity:
        opt.velocity = [np.zeros_like(p.data) for p in params]
    if len(opt.velocity) != len(params):
        raise ValueError("optimizer state does not match the parameter list")
    # validate everything first so a bad gradient leaves parameters untouched
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or opt.velocity[i].shape != p.shape:
            raise ValueError(f"parameter {i}: shape {p.shape}, gradient {g.shape}, velocity {opt.velocity[i].shape}")
        if not np.all(np.isfinite(g)):
            label = names[i] if names else (p.name or f"#{i}")
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradient(f"non-finite gradient in parameter {label}: {bad} of {g.size} entries")
    for p, g, v in zip(params, grads, opt.velocity):
        v *= opt.momentum
        v += g
        p.data = p.data - opt.learning_rate * v

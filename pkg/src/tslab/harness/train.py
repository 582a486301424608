"""Source-domain training with best-checkpoint selection and early stopping."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from ..models import ModelConfig, ModelState, build_model, forward
from ..shapegen import DatasetSplit
from ..tensor import functional as F
from ..tensor.optim import OptState, sgd_step
from ..tensor.rng import RngState
from ..tensor.tensor import Tensor, parameters_grads
from . import checkpoint
from .evaluate import evaluate

log = logging.getLogger(__name__)

# RngState path roots, so each consumer of a run seed has its own stream
STREAM_INIT, STREAM_SHUFFLE, STREAM_FLIP = 1, 2, 3


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 0.001
    momentum: float = 0.9
    seed: int = 0
    flip_augment: bool = False
    # stop as soon as val accuracy reaches this value (None: train until patience/max_epochs)
    target_val_acc: Optional[float] = None
    # batches used to re-estimate batch-norm stats after each epoch (0: keep the running average)
    precise_bn_batches: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError(f"patience must lie in [1, max_epochs={self.max_epochs}], got {self.patience}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    @classmethod
    def for_family(cls, family: str, **kw) -> "TrainConfig":
        if family == "TimeSformer":
            kw.setdefault("max_epochs", 300)
            kw.setdefault("patience", 100)
        return cls(**kw)


@dataclass
class RunRecord:
    preset: str
    family: str
    seed: int
    source_domain: str
    config: dict
    train_config: dict
    best_val_acc: float = 0.0
    best_epoch: int = -1
    curve: list = field(default_factory=list)  # [{epoch, train_loss, val_acc}]
    checkpoint: Optional[str] = None
    evals: dict = field(default_factory=dict)
    rr: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    run_id: str = ""

    def __post_init__(self):
        if not self.run_id:
            self.run_id = make_run_id(self.config, self.train_config, self.source_domain)

    @property
    def h_or_dh(self) -> int:
        return self.config["head_dim"] if self.family == "TimeSformer" else self.config["hidden"][0]

    @property
    def heads(self) -> int:
        return self.config["heads"] if self.family == "TimeSformer" else 0

    @property
    def family_label(self) -> str:
        return f"TimeSf-{self.heads}" if self.family == "TimeSformer" else self.family

    def to_json(self) -> dict:
        d = asdict(self)
        d["h_or_dh"] = self.h_or_dh
        d["heads"] = self.heads
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RunRecord":
        d = {k: v for k, v in d.items() if k not in ("h_or_dh", "heads")}
        return cls(**d)


def make_run_id(config: dict, train_config: dict, source_domain: str) -> str:
    blob = json.dumps({"config": config, "train": train_config, "source": source_domain}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def clip_batch(frames: np.ndarray, flip: Optional[np.ndarray] = None) -> Tensor:
    """uint8 [B,T,H,W] -> float [B,1,T,H,W] in [0,1], optionally mirrored left-right per clip."""
    x = frames.astype(np.float64) * (1.0 / 255.0)
    if flip is not None and flip.any():
        x[flip] = x[flip][..., ::-1]
    return Tensor(x[:, None])


def check_geometry(cfg: ModelConfig, split: DatasetSplit) -> None:
    if len(split) == 0:
        raise ValueError(f"{split.role} split is empty")
    _, t, h, w = split.frames.shape
    g = cfg.input
    if (t, h, w) != (g.frames, g.height, g.width) or g.channels != 1:
        raise ValueError(f"split geometry {t}x{h}x{w} (grey) does not match model input "
                         f"{g.frames}x{g.height}x{g.width} with {g.channels} channels")
    if int(split.labels.max()) >= cfg.num_classes:
        raise ValueError(f"split has label {int(split.labels.max())} but the model has {cfg.num_classes} classes")


def train_epoch(state: ModelState, split: DatasetSplit, cfg: TrainConfig, opt: OptState, epoch: int) -> float:
    names = list(state.params)
    params = state.parameters()
    order = RngState(cfg.seed, (STREAM_SHUFFLE, epoch)).permutation(len(split))
    flips = RngState(cfg.seed, (STREAM_FLIP, epoch)).random(len(split)) < 0.5 if cfg.flip_augment else None
    total = 0.0
    for start in range(0, len(split), cfg.batch_size):
        idx = np.sort(order[start:start + cfg.batch_size])
        x = clip_batch(split.frames[idx], flips[idx] if flips is not None else None)
        loss = F.softmax_cross_entropy(forward(state, x, training=True), split.labels[idx])
        if not np.isfinite(loss.item()):
            raise NonFiniteLoss(f"loss became {loss.item()} at epoch {epoch}, batch starting at {start}")
        loss.backward()
        sgd_step(params, parameters_grads(params), opt, names)
        for p in params:
            p.grad = None
        total += loss.item() * len(idx)
    return total / len(split)


def recalibrate_bn(state: ModelState, split: DatasetSplit, batch_size: int, max_batches: int) -> None:
    """Replace running batch-norm stats by their plain average over fixed-weight training batches.

    The exponential running average lags the weights while they move; a short
    pass with the weights frozen gives eval-mode statistics that match them.
    """
    if not state.stats or max_batches <= 0:
        return
    for s in state.stats.values():
        s.mean[:], s.var[:] = 0.0, 1.0
        s.steps, s.cumulative = 0, True
    try:
        for start in range(0, min(len(split), batch_size * max_batches), batch_size):
            forward(state, clip_batch(split.frames[start:start + batch_size]), training=True)
    finally:
        for s in state.stats.values():
            s.cumulative = False


def train(model_cfg: ModelConfig, train_split: DatasetSplit, val_split: DatasetSplit, cfg: TrainConfig,
          *, source_domain: str = "2Dot", checkpoint_path=None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> tuple[RunRecord, ModelState]:
    """Train from scratch; returns the record and the best-validation model state."""
    check_geometry(model_cfg, train_split)
    check_geometry(model_cfg, val_split)
    t0 = time.perf_counter()
    state = build_model(model_cfg, RngState(cfg.seed, (STREAM_INIT,)))
    opt = OptState.for_params(state.parameters(), cfg.learning_rate, cfg.momentum)
    rec = RunRecord(model_cfg.name or model_cfg.family, model_cfg.family, cfg.seed, source_domain,
                    model_cfg.to_dict(), asdict(cfg))
    best_bytes = None
    for epoch in range(cfg.max_epochs):
        train_loss = train_epoch(state, train_split, cfg, opt, epoch)
        recalibrate_bn(state, train_split, cfg.batch_size, cfg.precise_bn_batches)
        val_acc = evaluate(state, val_split)["top1"]
        point = {"epoch": epoch, "train_loss": train_loss, "val_acc": val_acc}
        rec.curve.append(point)
        log.info("%s seed %d epoch %d: loss %.4f val %.3f", rec.preset, cfg.seed, epoch, train_loss, val_acc)
        if on_epoch:
            on_epoch(point)
        # ties keep the earlier checkpoint
        if val_acc > rec.best_val_acc or best_bytes is None:
            rec.best_val_acc, rec.best_epoch = val_acc, epoch
            best_bytes = checkpoint.encode(state, {"epoch": epoch, "seed": cfg.seed})
        if cfg.target_val_acc is not None and rec.best_val_acc >= cfg.target_val_acc:
            break
        if epoch - rec.best_epoch >= cfg.patience:
            break
    best, _ = checkpoint.decode(best_bytes)
    if checkpoint_path is not None:
        checkpoint.save(checkpoint_path, best, {"epoch": rec.best_epoch, "seed": cfg.seed})
        rec.checkpoint = str(checkpoint_path)
    rec.wall_seconds = time.perf_counter() - t0
    return rec, best

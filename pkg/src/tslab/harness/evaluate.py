"""Eval-mode accuracy, robustness ratios and seed/size aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np

from ..models import ModelState, forward
from ..shapegen import DatasetSplit
from ..tensor.tensor import Tensor

if TYPE_CHECKING:
    from .train import RunRecord

EVAL_BATCH = 50
VAL_KEY = "val"


def predict_logits(state: ModelState, split: DatasetSplit, batch: int = EVAL_BATCH) -> np.ndarray:
    from .train import check_geometry

    check_geometry(state.config, split)
    out = []
    for start in range(0, len(split), batch):
        x = split.frames[start:start + batch].astype(np.float64) * (1.0 / 255.0)
        out.append(forward(state, Tensor(x[:, None]), training=False).data)
    return np.concatenate(out)


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    k = min(k, logits.shape[1])
    # stable sort: among equal logits the lower class id ranks first
    top = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(top == np.asarray(labels)[:, None], axis=1)))


def evaluate(state, split: DatasetSplit, batch: int = EVAL_BATCH) -> dict:
    """Top-1 / top-5 accuracy; ``state`` is a ModelState or a checkpoint path."""
    if not isinstance(state, ModelState):
        from . import checkpoint

        state, _ = checkpoint.load(state)
    logits = predict_logits(state, split, batch)
    return {"top1": topk_accuracy(logits, split.labels, 1), "top5": topk_accuracy(logits, split.labels, 5)}


def robustness_ratio(target_acc: float, best_val_acc: float) -> float:
    if not best_val_acc > 0:
        raise ValueError(f"robustness ratio undefined: best validation accuracy is {best_val_acc}")
    return target_acc / best_val_acc


def cross_domain_eval(run: "RunRecord", target_splits: Mapping[str, DatasetSplit],
                      state: ModelState | None = None) -> "RunRecord":
    """Fill ``run.evals`` / ``run.rr`` for each target domain (plus the source val entry)."""
    if state is None:
        if run.checkpoint is None:
            raise ValueError(f"run {run.run_id} has no checkpoint to evaluate")
        from . import checkpoint

        state, _ = checkpoint.load(run.checkpoint)
    run.evals[VAL_KEY] = run.best_val_acc
    run.rr[VAL_KEY] = 1.0
    for domain, split in target_splits.items():
        acc = evaluate(state, split)["top1"]
        run.evals[domain] = acc
        run.rr[domain] = robustness_ratio(acc, run.best_val_acc)
    return run


@dataclass
class Cell:
    mean: float
    std: float
    n: int


@dataclass
class AggregateReport:
    accuracy: dict = field(default_factory=dict)  # (family, domain) -> Cell
    rr: dict = field(default_factory=dict)
    by_size: dict = field(default_factory=dict)  # (family, domain, size) -> Cell of rr
    runs: list = field(default_factory=list)  # provenance: run ids

    def families(self) -> list[str]:
        return sorted({f for f, _ in self.accuracy})

    def domains(self) -> list[str]:
        seen = []
        for _, d in self.accuracy:
            if d not in seen:
                seen.append(d)
        return seen


def _cell(values: Sequence[float]) -> Cell:
    v = np.asarray(values, dtype=np.float64)
    return Cell(float(v.mean()), float(v.std()), len(v))  # population std


def aggregate(runs: Sequence["RunRecord"]) -> AggregateReport:
    if not runs:
        raise ValueError("aggregate needs at least one run")
    acc: dict = {}
    rr: dict = {}
    size: dict = {}
    for r in runs:
        for d, a in r.evals.items():
            acc.setdefault((r.family_label, d), []).append(a)
        for d, x in r.rr.items():
            rr.setdefault((r.family_label, d), []).append(x)
            size.setdefault((r.family_label, d, r.h_or_dh), []).append(x)
    rep = AggregateReport(runs=[r.run_id for r in runs])
    rep.accuracy = {k: _cell(v) for k, v in acc.items()}
    rep.rr = {k: _cell(v) for k, v in rr.items()}
    rep.by_size = {k: _cell(v) for k, v in sorted(size.items())}
    return rep


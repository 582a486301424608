"""Training and cross-domain evaluation protocol."""
from .checkpoint import CheckpointError
from .evaluate import (AggregateReport, aggregate, cross_domain_eval, evaluate, predict_logits,
                       robustness_ratio, topk_accuracy)
from .train import NonFiniteLoss, RunRecord, TrainConfig, make_run_id, train

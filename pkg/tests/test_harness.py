import importlib

import numpy as np
import pytest

from tslab.harness import checkpoint
from tslab.harness.evaluate import (aggregate, cross_domain_eval, evaluate, predict_logits,
                                    robustness_ratio, topk_accuracy)
from tslab.harness.train import NonFiniteLoss, RunRecord, TrainConfig, train
from tslab.models import build_model, cnn3d_ts
from tslab.tensor.tensor import Tensor

# the package re-exports train(), which shadows the submodule attribute
train_mod = importlib.import_module("tslab.harness.train")
FAST = dict(batch_size=8, learning_rate=0.01)


@pytest.fixture(scope="module")
def trained(small_2dot):
    cfg = TrainConfig(max_epochs=2, patience=2, seed=5, **FAST)
    rec, state = train(cnn3d_ts(2), small_2dot["train"], small_2dot["val"], cfg)
    return rec, state


def test_zero_epochs_rejected():
    with pytest.raises(ValueError, match="max_epochs"):
        TrainConfig(max_epochs=0)


def test_patience_above_budget_rejected():
    with pytest.raises(ValueError, match="patience"):
        TrainConfig(max_epochs=3, patience=4)


def test_timesformer_budget():
    cfg = TrainConfig.for_family("TimeSformer")
    assert (cfg.max_epochs, cfg.patience, cfg.batch_size) == (300, 100, 64)
    assert TrainConfig.for_family("CNN3D").max_epochs == 100


def test_patience_one_stops_after_two_epochs(small_2dot, monkeypatch):
    vals = iter([0.6, 0.4, 0.3, 0.2])
    monkeypatch.setattr(train_mod, "evaluate", lambda state, split: {"top1": next(vals), "top5": 1.0})
    cfg = TrainConfig(max_epochs=10, patience=1, **FAST)
    rec, _ = train(cnn3d_ts(2), small_2dot["train"].subset(10), small_2dot["val"], cfg)
    assert [p["val_acc"] for p in rec.curve] == [0.6, 0.4]
    assert (rec.best_epoch, rec.best_val_acc) == (0, 0.6)


def test_best_checkpoint_never_worse(small_2dot, monkeypatch):
    vals = iter([0.3, 0.5, 0.5, 0.4])
    seen = []

    def fake_eval(state, split):
        seen.append(checkpoint.encode(state))
        return {"top1": next(vals), "top5": 1.0}

    monkeypatch.setattr(train_mod, "evaluate", fake_eval)
    cfg = TrainConfig(max_epochs=4, patience=4, **FAST)
    rec, best = train(cnn3d_ts(2), small_2dot["train"].subset(10), small_2dot["val"], cfg)
    # tie at epoch 2 keeps epoch 1
    assert rec.best_epoch == 1 and rec.best_val_acc == max(p["val_acc"] for p in rec.curve)
    assert checkpoint.encode(best) == seen[1]


def test_target_accuracy_stops_early(small_2dot, monkeypatch):
    vals = iter([0.3, 0.7, 0.9])
    monkeypatch.setattr(train_mod, "evaluate", lambda state, split: {"top1": next(vals), "top5": 1.0})
    cfg = TrainConfig(max_epochs=3, patience=3, target_val_acc=0.6, **FAST)
    rec, _ = train(cnn3d_ts(2), small_2dot["train"].subset(10), small_2dot["val"], cfg)
    assert len(rec.curve) == 2


def test_recalibrated_stats_match_batch(small_2dot):
    from tslab.models import convlstm_ts, forward
    from tslab.harness.train import clip_batch, recalibrate_bn

    state = build_model(convlstm_ts(2), 3)
    split = small_2dot["train"]
    recalibrate_bn(state, split, batch_size=8, max_batches=1)
    assert all(not s.cumulative and s.steps == 1 for s in state.stats.values())
    x = clip_batch(split.frames[:8])
    # one batch: eval-mode stats equal that batch's (up to the unbiased-variance factor)
    assert np.allclose(forward(state, x, training=False).data, forward(state.clone(), x, training=True).data,
                       rtol=1e-3, atol=1e-4)


def test_rerun_is_bit_identical(small_2dot, tmp_path, trained):
    rec_a, _ = trained
    cfg = TrainConfig(max_epochs=2, patience=2, seed=5, **FAST)
    rec_b, _ = train(cnn3d_ts(2), small_2dot["train"], small_2dot["val"], cfg,
                     checkpoint_path=tmp_path / "b.ck")
    rec_c, _ = train(cnn3d_ts(2), small_2dot["train"], small_2dot["val"], cfg,
                     checkpoint_path=tmp_path / "c.ck")
    assert rec_a.curve == rec_b.curve == rec_c.curve
    assert (tmp_path / "b.ck").read_bytes() == (tmp_path / "c.ck").read_bytes()
    assert rec_b.run_id == rec_c.run_id


def test_flip_changes_training(small_2dot, trained):
    rec_a, _ = trained
    cfg = TrainConfig(max_epochs=1, patience=1, seed=5, flip_augment=True, **FAST)
    rec_f, _ = train(cnn3d_ts(2), small_2dot["train"], small_2dot["val"], cfg)
    assert rec_f.curve[0]["train_loss"] != rec_a.curve[0]["train_loss"]
    assert rec_f.run_id != rec_a.run_id


def test_nan_loss_aborts(small_2dot, monkeypatch):
    monkeypatch.setattr(train_mod.F, "softmax_cross_entropy", lambda logits, labels: Tensor(np.array(np.nan)))
    cfg = TrainConfig(max_epochs=1, patience=1, **FAST)
    with pytest.raises(NonFiniteLoss, match="epoch 0"):
        train(cnn3d_ts(2), small_2dot["train"].subset(10), small_2dot["val"], cfg)


def test_empty_split_rejected(small_2dot):
    with pytest.raises(ValueError, match="empty"):
        train(cnn3d_ts(2), small_2dot["train"].subset(0), small_2dot["val"], TrainConfig(max_epochs=1, patience=1))


def test_geometry_mismatch(small_2dot):
    state = build_model(cnn3d_ts(2).with_input(frames=8, height=32, width=32), 0)
    with pytest.raises(ValueError, match="geometry"):
        evaluate(state, small_2dot["eval"])


# -- evaluation -----------------------------------------------------------

def test_constant_logits_at_chance(small_2dot):
    state = build_model(cnn3d_ts(2), 0)
    state.params["fc.w"].data[:] = 0.0
    state.params["fc.b"].data[:] = 0.0
    split = small_2dot["train"]
    res = evaluate(state, split)
    # all ties resolve to class 0, which holds a fifth of the balanced split
    assert res["top1"] == pytest.approx(split.class_counts()[0] / len(split))
    assert abs(res["top1"] - 0.2) <= 1 / len(split)
    assert res["top5"] == 1.0


def test_oracle_weights_reach_full_accuracy(small_2dot):
    split = small_2dot["eval"].subset(10)
    state = build_model(cnn3d_ts(2), 1)
    w, b = state.params["fc.w"], state.params["fc.b"]
    d = w.shape[1]
    # identity head exposes the penultimate features
    state.params["fc.w"], state.params["fc.b"] = Tensor(np.eye(d)), Tensor(np.zeros(d))
    feats = predict_logits(state, split)
    target = 10.0 * np.eye(5)[split.labels]
    sol, *_ = np.linalg.lstsq(feats, target, rcond=None)
    state.params["fc.w"], state.params["fc.b"] = w, b
    w.data[:] = sol.T
    b.data[:] = 0.0
    assert evaluate(state, split)["top1"] == 1.0


def test_topk_ties_are_stable():
    logits = np.zeros((3, 5))
    assert topk_accuracy(logits, np.array([0, 1, 4]), 1) == pytest.approx(1 / 3)
    assert topk_accuracy(logits, np.array([0, 1, 4]), 2) == pytest.approx(2 / 3)
    assert topk_accuracy(logits, np.array([0, 1, 4]), 5) == 1.0


def test_eval_batch_invariant(small_2dot, trained):
    _, state = trained
    split = small_2dot["eval"]
    assert np.allclose(predict_logits(state, split, batch=50), predict_logits(state, split, batch=3), atol=1e-12)


def test_eval_from_checkpoint_path(small_2dot, trained, tmp_path):
    _, state = trained
    path = tmp_path / "s.ck"
    checkpoint.save(path, state)
    assert evaluate(path, small_2dot["eval"]) == evaluate(state, small_2dot["eval"])


# -- robustness ratio and cross-domain ---------------------------------------

@pytest.mark.parametrize("target,val,expected", [(0.7, 0.7, 1.0), (38.6, 89.4, 0.4318), (20.0, 89.4, 0.2237),
                                                 (73.4, 89.4, 0.8210)])
def test_robustness_ratio(target, val, expected):
    assert robustness_ratio(target, val) == pytest.approx(expected, abs=5e-5)


def test_ratio_scale_free():
    assert robustness_ratio(0.3 * 7, 0.9 * 7) == pytest.approx(robustness_ratio(0.3, 0.9))


def test_ratio_zero_denominator():
    with pytest.raises(ValueError):
        robustness_ratio(0.5, 0.0)


def test_cross_domain_eval(small_2dot, trained):
    from tslab.shapegen import generate_split

    rec, state = trained
    rec = RunRecord.from_json(rec.to_json())
    five = generate_split("5dot", {"train": 5, "val": 5, "eval": 20}, seed=3)["eval"]
    targets = {"5Dot": five, "2Dot-eval": small_2dot["eval"]}
    cross_domain_eval(rec, {}, state)
    assert rec.rr == {"val": 1.0}
    cross_domain_eval(rec, targets, state)
    assert set(rec.rr) == {"val", "5Dot", "2Dot-eval"}
    for d in targets:
        assert rec.rr[d] == pytest.approx(rec.evals[d] / rec.best_val_acc)
    first = dict(rec.rr)
    cross_domain_eval(rec, targets, state)
    assert rec.rr == first


def test_cross_domain_needs_checkpoint(trained):
    rec = RunRecord.from_json(trained[0].to_json())
    rec.checkpoint = None
    with pytest.raises(ValueError, match="checkpoint"):
        cross_domain_eval(rec, {})


# -- aggregation --------------------------------------------------------------

def _record(seed, acc, h=4):
    rec = RunRecord("x", "CNN3D", seed, "2Dot", {"hidden": [h]}, {"seed": seed}, best_val_acc=0.8)
    rec.evals = {"val": 0.8, "5Dot": acc}
    rec.rr = {"val": 1.0, "5Dot": acc / 0.8}
    return rec


def test_aggregate_population_std():
    rep = aggregate([_record(0, 0.4), _record(1, 0.6)])
    cell = rep.accuracy[("CNN3D", "5Dot")]
    assert (cell.mean, cell.n) == (pytest.approx(0.5), 2)
    assert cell.std == pytest.approx(0.1)
    assert rep.domains() == ["val", "5Dot"]


def test_aggregate_single_run():
    rep = aggregate([_record(0, 0.4)])
    assert rep.accuracy[("CNN3D", "5Dot")].std == 0.0


def test_aggregate_pools_sizes_and_seeds():
    runs = [_record(s, 0.5, h) for s in range(5) for h in (2, 4, 6, 8, 10, 12, 16, 24, 32, 48)]
    rep = aggregate(runs)
    assert rep.accuracy[("CNN3D", "5Dot")].n == 50
    assert rep.by_size[("CNN3D", "5Dot", 48)].n == 5
    assert len(rep.runs) == 50


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate([])

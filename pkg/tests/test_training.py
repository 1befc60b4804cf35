import json

import numpy as np
import pytest

from progosd.autodiff import ShapeError, Tensor
from progosd.model import ProgressiveModel
from progosd.training import (DivergenceError, TrainConfig, VariantError,
                              load_checkpoint, parse_variant,
                              pretrain_then_finetune, save_checkpoint,
                              total_loss, train)
from conftest import tiny_model_config


def tiny_train_config(**kw):
    base = dict(variant="p-spkAtt", epochs=2, batch_size=8, base_lr=1e-3,
                weight_decay=1e-4, seed=5, early_stop_patience=10,
                model=tiny_model_config())
    base.update(kw)
    return TrainConfig(**base)


def split_windows(windows):
    dev = [w for i, w in enumerate(windows) if i % 4 == 0]
    tr = [w for i, w in enumerate(windows) if i % 4 != 0]
    return tr, dev


def test_parse_variant():
    assert parse_variant("p-spkAtt") == (True, "spkAtt")
    assert parse_variant("u-OSD-spkMSE") == (False, "spkMSE")
    assert parse_variant("p") == (True, "none")
    with pytest.raises(VariantError):
        parse_variant("x-spkAtt")
    with pytest.raises(VariantError):
        parse_variant("p-spkFoo")


def test_total_loss_perfect_scores():
    y = np.random.default_rng(0).uniform(size=250)
    loss, lv, lo = total_loss(Tensor(y.reshape(-1, 1)), Tensor(y.reshape(-1, 1)),
                              y, y)
    assert float(loss.data) == 0.0 and lv == 0.0 and lo == 0.0


def test_total_loss_weight_algebra():
    rng = np.random.default_rng(1)
    s_vad = Tensor(rng.uniform(size=(50, 1)))
    s_osd = Tensor(rng.uniform(size=(50, 1)))
    y_vad, y_osd = rng.uniform(size=50), rng.uniform(size=50)
    loss, lv, _ = total_loss(s_vad, s_osd, y_vad, y_osd, weights=(2.0, 0.0, 1.0))
    assert float(loss.data) == pytest.approx(2.0 * lv, abs=1e-15)


def test_total_loss_scalar_oracle():
    rng = np.random.default_rng(2)
    s_vad = rng.uniform(size=(70, 1))
    s_osd = rng.uniform(size=(70, 1))
    y_vad, y_osd = rng.uniform(size=70), rng.uniform(size=70)
    loss, _, _ = total_loss(Tensor(s_vad), Tensor(s_osd), y_vad, y_osd)
    oracle = sum((y_vad[i] - s_vad[i, 0]) ** 2 for i in range(70)) / 70 \
        + sum((y_osd[i] - s_osd[i, 0]) ** 2 for i in range(70)) / 70
    assert abs(float(loss.data) - oracle) <= 1e-12


def test_total_loss_length_mismatch():
    with pytest.raises(ShapeError):
        total_loss(Tensor(np.zeros((5, 1))), Tensor(np.zeros((5, 1))),
                   np.zeros(6), np.zeros(5))


def test_training_deterministic(small_windows):
    tr, dev = split_windows(small_windows)
    cfg = tiny_train_config(epochs=2)
    r1 = train(cfg, tr, dev)
    r2 = train(cfg, tr, dev)
    assert r1.metrics == r2.metrics
    for p1, p2 in zip(r1.model.parameters(), r2.model.parameters()):
        np.testing.assert_array_equal(p1.data, p2.data)


def test_metrics_schema_and_monotone_steps(small_windows):
    tr, dev = split_windows(small_windows)
    r = train(tiny_train_config(epochs=2), tr, dev)
    keys = {"epoch", "step", "loss", "vad_loss", "osd_loss",
            "dev_precision", "dev_recall", "dev_f1", "lr"}
    steps = [m["step"] for m in r.metrics]
    for m in r.metrics:
        assert set(m) == keys
    assert steps == sorted(steps) and len(set(steps)) == len(steps)


def test_progressive_and_unified_diverge(small_windows):
    tr, dev = split_windows(small_windows)
    rp = train(tiny_train_config(variant="p-spkAtt", epochs=1), tr, dev)
    ru = train(tiny_train_config(variant="u-spkAtt", epochs=1), tr, dev)
    same_count = sum(p.data.size for p in rp.model.parameters())
    assert same_count == sum(p.data.size for p in ru.model.parameters())
    diff = any(not np.array_equal(p1.data, p2.data)
               for p1, p2 in zip(rp.model.parameters(), ru.model.parameters()))
    assert diff


def test_vad_branch_frozen_without_gradient_path(small_windows):
    tr, dev = split_windows(small_windows)
    cfg = tiny_train_config(variant="p-spkAtt", epochs=1, weight_decay=0.0,
                            loss_weights=(0.0, 1.0, 1.0),
                            mask_stop_gradient=True)
    init = ProgressiveModel(cfg.model, seed=cfg.seed)
    init_vals = {p.name: p.data.copy() for p in init.parameters()
                 if p.name.startswith("vad.")}
    r = train(cfg, tr, dev)
    for p in r.model.parameters():
        if p.name.startswith("vad."):
            np.testing.assert_array_equal(p.data, init_vals[p.name])


def test_metrics_log_file(small_windows, tmp_path):
    tr, dev = split_windows(small_windows)
    path = tmp_path / "metrics.jsonl"
    train(tiny_train_config(epochs=2), tr, dev, metrics_path=path)
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(rows) == 2
    assert rows[0]["epoch"] == 0 and rows[1]["epoch"] == 1


def test_divergence_guard(small_windows):
    tr, dev = split_windows(small_windows)
    poisoned = []
    for w in tr:
        bad = w.__class__(**{**w.__dict__})
        bad.samples = np.full_like(bad.samples, np.nan)
        poisoned.append(bad)
    with pytest.raises(DivergenceError, match="step"):
        train(tiny_train_config(epochs=1), poisoned, dev)


def test_checkpoint_round_trip_bitwise(small_windows, tmp_path):
    tr, dev = split_windows(small_windows)
    cfg = tiny_train_config(epochs=2)
    r = train(cfg, tr, dev, stop_epoch=1)  # interrupted after the first epoch
    ckpt = tmp_path / "model.osdc"
    save_checkpoint(ckpt, r.model, r.optimizer, cfg, {"next_epoch": 1})
    cfg2, model2, opt2, rng_state = load_checkpoint(ckpt)
    assert rng_state == {"next_epoch": 1}
    assert cfg2.config_hash() == cfg.config_hash()
    for p1, p2 in zip(r.model.parameters(), model2.parameters()):
        np.testing.assert_array_equal(p1.data, p2.data)
    # one more epoch from the reload equals one uninterrupted second epoch
    opt2.total_steps = r.optimizer.total_steps
    opt2.base_lr = cfg.base_lr
    resumed = train(cfg2, tr, dev, model=model2, optimizer=opt2, start_epoch=1)
    full = train(cfg, tr, dev)
    np.testing.assert_array_equal(
        np.concatenate([p.data.ravel() for p in resumed.model.parameters()]),
        np.concatenate([p.data.ravel() for p in full.model.parameters()]))
    assert resumed.metrics[0] == full.metrics[1]


def test_pretrain_zero_epochs_equals_finetune_only(small_windows):
    tr, dev = split_windows(small_windows)
    cfg = tiny_train_config(epochs=2, pretrain_epochs=0)
    r1 = pretrain_then_finetune(cfg, (tr, dev), (tr, dev))
    r2 = train(cfg, tr, dev)
    assert r1.metrics == r2.metrics

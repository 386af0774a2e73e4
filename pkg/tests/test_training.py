import csv
import dataclasses

import numpy as np
import pytest

from trajgatformer.errors import ConfigError, TrainingFailure, TransferIncompatible
from trajgatformer.model import ModelConfig, TrajGATFormer, pack_windows
from trajgatformer.numerics import AdamState, Tensor
from trajgatformer.synth import synth_windows
from trajgatformer.trackio import split_dataset
from trajgatformer.training import (
    Checkpoint, TrainConfig, fit, l2_loss, make_batches, mixed_tokens, train_epoch,
    transfer_init, validation_loss,
)

TINY = ModelConfig(d_model=16, n_heads=2, d_k=8, ffn_hidden=16, dropout=0.0)
FAST = TrainConfig(epochs=3, warmup=20, seed=4)


@pytest.fixture(scope="module")
def split():
    return split_dataset(synth_windows(20, profiles=("panel",), seed=2))


def test_l2_loss_hand_value():
    pred = np.zeros((2, 3, 2))
    truth = np.zeros((2, 3, 2))
    truth[0, 0] = (3.0, 4.0)
    assert l2_loss(pred, truth).item() == pytest.approx(25.0 / 6)


def test_config_round_trip_and_validation():
    cfg = TrainConfig(epochs=5, sampling_prob=0.25)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 2, "momentum": 0.9})
    with pytest.raises(ConfigError):
        TrainConfig(sampling_prob=1.5)


def test_batches_cover_every_window_once(split):
    rng = np.random.default_rng(0)
    batches = make_batches(split.train, TINY, TrainConfig(), rng)
    ids = sorted(w.scene_window_id for b in batches for w in b)
    assert ids == sorted(w.scene_window_id for w in split.train)
    for b in batches[:-1]:
        assert sum(len(w.agents) for w in b) >= 4


def test_mixed_tokens_extremes(split):
    m = TrajGATFormer(TINY, seed=0)
    batch = pack_windows(split.train[:3], TINY)
    rng = np.random.default_rng(0)
    truth = m.target_tokens(batch)
    assert np.array_equal(mixed_tokens(m, batch, 0.0, rng), truth)
    own = m.target_tokens(batch, future=m.autoregressive(batch))
    assert np.array_equal(mixed_tokens(m, batch, 1.0, rng), own)


def test_train_epoch_is_deterministic(split):
    results = []
    for _ in range(2):
        m = TrajGATFormer(TINY, seed=1)
        state = AdamState.for_params(m.parameters())
        loss, lr = train_epoch(m, split.train, FAST, state, np.random.default_rng(7))
        results.append((loss, lr, m.named_arrays()))
    assert results[0][:2] == results[1][:2]
    for k, v in results[0][2].items():
        assert np.array_equal(v, results[1][2][k])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_epoch_flags_non_finite(split):
    m = TrajGATFormer(TINY, seed=1)
    m.params["out.b"].data[:] = np.inf
    with pytest.raises(TrainingFailure) as err:
        train_epoch(m, split.train, FAST, AdamState.for_params(m.parameters()),
                    np.random.default_rng(0))
    assert err.value.step == 1


def test_free_running_training_refused(split):
    m = TrajGATFormer(TINY)
    with pytest.raises(ConfigError):
        train_epoch(m, split.train, dataclasses.replace(FAST, teacher_forcing=False),
                    AdamState.for_params(m.parameters()), np.random.default_rng(0))


def test_fit_keeps_best_and_logs(split, tmp_path):
    m = TrajGATFormer(TINY, seed=0)
    ckpt = fit(m, split, FAST, log_path=tmp_path / "log.csv")
    vals = [h[2] for h in ckpt.loss_history]
    assert ckpt.epoch == int(np.argmin(vals)) + 1
    assert validation_loss(m, split.val) == min(vals)
    rows = list(csv.DictReader((tmp_path / "log.csv").open()))
    assert [r["epoch"] for r in rows] == ["1", "2", "3"]
    assert set(rows[0]) == {"epoch", "train_loss", "val_loss", "lr_at_epoch_end"}


def test_checkpoint_round_trip(split, tmp_path):
    m = TrajGATFormer(TINY, seed=0)
    ckpt = fit(m, split, dataclasses.replace(FAST, epochs=1))
    back = Checkpoint.load(ckpt.save(tmp_path / "c.json"))
    assert back.dumps() == ckpt.dumps()
    assert back.model_config == TINY and back.train_config == ckpt.train_config
    w = split.test[0]
    a, b = ckpt.model().forecast(w), back.model().forecast(w)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_fit_is_bitwise_reproducible(split):
    dumps = []
    for _ in range(2):
        dumps.append(fit(TrajGATFormer(TINY, seed=0), split,
                         dataclasses.replace(FAST, sampling_prob=0.5)).dumps())
    assert dumps[0] == dumps[1]


def test_transfer_init_copies_and_resets(split):
    base = fit(TrajGATFormer(TINY, seed=0), split, dataclasses.replace(FAST, epochs=1))
    model, state = transfer_init(TINY, base)
    for k, v in model.named_arrays().items():
        assert np.array_equal(v, base.params[k])
    assert state.step == 0 and all(not m.any() for m in state.m)
    with pytest.raises(TransferIncompatible) as err:
        transfer_init(dataclasses.replace(TINY, d_model=32, d_k=16), base)
    assert any("gat.w" in m for m in err.value.mismatches)
    with pytest.raises(TransferIncompatible):
        transfer_init(dataclasses.replace(TINY, variant="with_obstacle"), base)


def test_obstacle_variant_trains(split):
    cfg = dataclasses.replace(TINY, variant="with_obstacle")
    ckpt = fit(TrajGATFormer(cfg, seed=0), split, dataclasses.replace(FAST, epochs=2))
    assert ckpt.variant == "with_obstacle"
    assert np.isfinite([h[1] for h in ckpt.loss_history]).all()


def test_loss_decreases_on_a_tiny_set(split):
    m = TrajGATFormer(TINY, seed=0)
    state = AdamState.for_params(m.parameters())
    rng = np.random.default_rng(0)
    cfg = TrainConfig(warmup=30, seed=0)
    first = train_epoch(m, split.train[:4], cfg, state, rng)[0]
    for _ in range(40):
        last = train_epoch(m, split.train[:4], cfg, state, rng)[0]
    assert last < 0.5 * first


def test_tensor_is_untouched_by_validation(split):
    m = TrajGATFormer(TINY, seed=0)
    before = {k: v.copy() for k, v in m.named_arrays().items()}
    validation_loss(m, split.val)
    assert all(np.array_equal(before[k], v) for k, v in m.named_arrays().items())
    assert isinstance(m.params["gat.w"], Tensor)

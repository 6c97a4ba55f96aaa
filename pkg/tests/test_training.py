import csv
from dataclasses import replace

import numpy as np
import pytest

from trajnet import tensor as T
from trajnet.data.manifest import window_sequence
from trajnet.data.synthetic import SynthConfig, generate_synthetic
from trajnet.errors import (ConfigError, DimensionError, DivergenceError, InputLengthError,
                            UnitError, UsageError)
from trajnet.model import ModelConfig, TrajectoryNet
from trajnet.training import (Preprocessing, TrainConfig, mpjpe_loss, predict,
                              predict_checkpoint, require_horizon, train)

from oracles import grad_check

SMALL = ModelConfig(n_joints=7, input_frames=4, output_frames=3, hidden_channels=4, n_blocks=1)


def pairs_for(cfg=SMALL, n=6, seed=0, units="millimeters"):
    seqs = generate_synthetic(SynthConfig(n_sequences=n, n_frames=cfg.input_frames
                                          + cfg.output_frames, n_joints=cfg.n_joints,
                                          seed=seed, units=units))
    out = []
    for s in seqs:
        out.extend(window_sequence(s, cfg.input_frames, cfg.output_frames, 1))
    return out


def quick(**kw):
    return TrainConfig(**({"batch_size": 4, "max_epochs": 3, "learning_rate": 1e-3} | kw))


# --- loss ----------------------------------------------------------------------

def test_loss_zero_and_worked_example():
    p = np.random.default_rng(0).normal(size=(3, 3, 5))
    assert float(mpjpe_loss(T.Tensor(p), p).data) == 0.0
    pred = T.Tensor(np.array([1.0, 2.0, 2.0]).reshape(1, 3, 1))
    assert float(mpjpe_loss(pred, np.zeros((1, 3, 1))).data) == 9.0


def test_loss_is_squared_norm_mean_over_frames_and_joints():
    r = np.random.default_rng(1)
    p, t = r.normal(size=(2, 2, 4, 3, 6))
    sq = ((p - t) ** 2).sum(axis=2)  # [batch, frames, joints]
    np.testing.assert_allclose(float(mpjpe_loss(T.Tensor(p), t).data), sq.mean(), rtol=1e-14)


def test_loss_invariant_to_joint_permutation():
    r = np.random.default_rng(2)
    p, t = r.normal(size=(2, 5, 3, 8))
    perm = r.permutation(8)
    a = float(mpjpe_loss(T.Tensor(p), t).data)
    b = float(mpjpe_loss(T.Tensor(p[..., perm]), t[..., perm]).data)
    assert a == pytest.approx(b, rel=1e-14)


def test_loss_gradient_and_shape_check():
    r = np.random.default_rng(3)
    p, t = r.normal(size=(2, 4, 3, 5))
    assert grad_check(lambda x: mpjpe_loss(x[0], t), [p])[0] <= 1e-8
    with pytest.raises(DimensionError):
        mpjpe_loss(T.Tensor(p), t[:3])


# --- config -----------------------------------------------------------------------

@pytest.mark.parametrize("bad", [dict(learning_rate=-1.0), dict(batch_size=0),
                                 dict(lr_decay=1.5), dict(eval_every=0)])
def test_train_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


# --- training loop ---------------------------------------------------------------

def test_empty_dataset_is_a_usage_error():
    with pytest.raises(UsageError):
        train(TrajectoryNet(SMALL), [], quick())


def test_wrong_pair_lengths_rejected():
    bad = pairs_for(replace(SMALL, input_frames=5))
    with pytest.raises(DimensionError):
        train(TrajectoryNet(SMALL), bad, quick())


def test_mixed_units_rejected():
    mixed = pairs_for() + pairs_for(units="meters")
    with pytest.raises(UnitError):
        train(TrajectoryNet(SMALL), mixed, quick())


def test_zero_learning_rate_keeps_parameters():
    m = TrajectoryNet(SMALL, seed=1)
    before = m.state_dict()
    train(m, pairs_for(), quick(learning_rate=0.0))
    for k, v in m.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_same_seed_same_curve_and_different_seed_differs():
    runs = []
    for seed in (0, 0, 1):
        m = TrajectoryNet(SMALL, seed=0)
        runs.append(train(m, pairs_for(), quick(seed=seed)).losses)
    assert runs[0] == runs[1]
    assert runs[0] != runs[2]


def test_seed_changes_values_not_structure():
    shapes = []
    for seed in (0, 5):
        m = TrajectoryNet(SMALL, seed=0)
        before = m.state_dict()
        train(m, pairs_for(), quick(seed=seed, max_epochs=1))
        changed = {k for k, v in m.state_dict().items() if not np.array_equal(v, before[k])}
        shapes.append(({k: v.shape for k, v in m.state_dict().items()}, changed))
    assert shapes[0] == shapes[1]


@pytest.mark.parametrize("decay", [None, 0.7])
def test_resume_is_bit_reproducible(decay):
    data = pairs_for()
    full = TrajectoryNet(SMALL, seed=2)
    straight = train(full, data, quick(max_epochs=4, lr_decay=decay))
    half = TrajectoryNet(SMALL, seed=2)
    first = train(half, data, quick(max_epochs=2, lr_decay=decay))
    resumed = train(TrajectoryNet(SMALL, seed=99), data, quick(max_epochs=4, lr_decay=decay),
                    resume=first.checkpoint)
    assert resumed.losses == straight.losses
    for k, v in straight.checkpoint.params.items():
        np.testing.assert_array_equal(resumed.checkpoint.params[k], v)


def test_resume_rejects_other_architecture():
    first = train(TrajectoryNet(SMALL), pairs_for(), quick(max_epochs=1))
    with pytest.raises(ConfigError):
        train(TrajectoryNet(replace(SMALL, hidden_channels=6)), pairs_for(), quick(),
              resume=first.checkpoint)


def test_divergence_keeps_last_good_checkpoint():
    data = pairs_for()
    m = TrajectoryNet(SMALL)
    epochs_seen = []

    def poison(record):
        epochs_seen.append(record.epoch)
        if record.epoch == 2:
            m.params["decoder.conv2.bias"].data[...] = np.nan

    with pytest.raises(DivergenceError) as info:
        train(m, data, quick(max_epochs=5), on_epoch=poison)
    ckpt = info.value.checkpoint
    assert ckpt is not None and ckpt.epoch == 2
    assert all(np.isfinite(v).all() for v in ckpt.params.values())
    assert info.value.exit_code == 4


def test_training_log_columns(tmp_path):
    log = tmp_path / "log.csv"
    train(TrajectoryNet(SMALL), pairs_for(), quick(max_epochs=2), eval_pairs=pairs_for(seed=9),
          log_path=log)
    rows = list(csv.reader(log.open()))
    assert rows[0] == ["epoch", "train_loss", "eval_mpjpe", "wall_ms"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    assert all(float(r[2]) > 0 for r in rows[1:])


def test_lr_decay_and_early_stop():
    data = pairs_for()
    res = train(TrajectoryNet(SMALL), data, quick(max_epochs=3, lr_decay=0.5))
    assert res.checkpoint.adam.learning_rate == pytest.approx(1e-3 * 0.125)
    res = train(TrajectoryNet(SMALL), data, quick(max_epochs=50, learning_rate=0.0,
                                                   early_stop_patience=2), eval_pairs=data)
    assert res.checkpoint.epoch == 3


def test_loss_decreases_on_tiny_problem():
    res = train(TrajectoryNet(SMALL), pairs_for(n=2), quick(max_epochs=40, batch_size=8))
    assert res.losses[-1] < 0.5 * res.losses[0]


# --- preprocessing ----------------------------------------------------------------

@pytest.mark.parametrize("prep", [Preprocessing(root_center=True),
                                  Preprocessing(normalize=True),
                                  Preprocessing(root_center=True, normalize=True)])
def test_preprocessing_inverts(prep):
    frames = np.random.default_rng(4).normal(size=(5, 4, 7, 3)) * 300
    prep.fit(frames, root_joint=2)
    x, _, root = prep.forward(frames, None, root_joint=2)
    np.testing.assert_allclose(prep.inverse(x, root), frames, rtol=1e-12, atol=1e-9)


def test_preprocessed_training_predicts_in_raw_units():
    data = pairs_for()
    res = train(TrajectoryNet(SMALL), data, quick(), preprocessing=Preprocessing(True, True))
    assert res.checkpoint.preprocessing.offset is not None
    m = res.checkpoint.build_model()
    m.zero_decoder()
    pred = predict(m, data[0].input, res.checkpoint.preprocessing)
    np.testing.assert_allclose(pred.frames, np.repeat(data[0].input.frames[-1:], 3, axis=0),
                               atol=1e-9)


# --- prediction --------------------------------------------------------------------

def test_predict_contract():
    data = pairs_for()
    m = TrajectoryNet(SMALL)
    out = predict(m, data[0].input)
    assert len(out) == 3 and out.frame_interval_ms == data[0].input.frame_interval_ms
    assert out.units == data[0].input.units
    with pytest.raises(InputLengthError):
        predict(m, data[0].target)
    m.zero_decoder()
    pred = predict(m, data[0].input)
    for f in pred.frames:
        np.testing.assert_array_equal(f, data[0].input.frames[-1])


def test_checkpoint_prediction_guards():
    data = pairs_for()
    ckpt = train(TrajectoryNet(SMALL), data, quick(max_epochs=1)).checkpoint
    assert len(predict_checkpoint(ckpt, data[0].input)) == 3
    with pytest.raises(DimensionError):
        predict_checkpoint(ckpt, data[0].target)
    with pytest.raises(ConfigError):
        require_horizon(ckpt, 25)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from trajnet.data import (DatasetManifest, ManifestEntry, SynthConfig, dumps_binary,
                          dumps_checkpoint, dumps_text, generate_synthetic, load_checkpoint,
                          load_manifest, loads_binary, loads_checkpoint, loads_text,
                          parse_manifest, read_sequence, save_checkpoint, window_dataset,
                          window_sequence, write_manifest, write_sequence)
from trajnet.data.converters import H36M_32_TO_22, from_array
from trajnet.errors import (ChecksumError, ConfigError, DataError, ExtentError, MagicError,
                            ParseError, TruncationError, UsageError, VersionError)
from trajnet.model import ModelConfig, TrajectoryNet
from trajnet.skeleton import (H36M_22, KINECT_18, MotionSequence, SkeletonSpec,
                              generic_skeleton)
from trajnet.training import TrainConfig, predict_checkpoint, require_horizon, train


def random_seq(n_frames=35, spec=H36M_22, seed=0, label=None):
    frames = np.random.default_rng(seed).normal(size=(n_frames, spec.n_joints, spec.dim))
    return MotionSequence(spec, frames * 100.0, 40.0, label)


# --- sequence files ----------------------------------------------------------------

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def sequences(draw):
    n_joints = draw(st.integers(1, 12))
    dim = draw(st.integers(1, 4))
    n_frames = draw(st.integers(1, 8))
    units = draw(st.sampled_from(["millimeters", "meters"]))
    spec = generic_skeleton(n_joints, dim, units)
    if draw(st.booleans()):
        spec = draw(st.sampled_from([H36M_22, KINECT_18])).with_units(units)
    frames = draw(hnp.arrays(np.float64, (n_frames, spec.n_joints, spec.dim), elements=finite))
    interval = draw(st.floats(0.5, 200.0))
    label = draw(st.none() | st.text(min_size=1, max_size=12))
    return MotionSequence(spec, frames, interval, label)


def same(a, b):
    assert a == b
    assert a.units == b.units and a.label == b.label and a.spec.name == b.spec.name
    assert np.array_equal(a.frames.view(np.int64), b.frames.view(np.int64))


@settings(max_examples=250)
@given(sequences())
def test_text_round_trip(seq):
    same(loads_text(dumps_text(seq)), seq)


@settings(max_examples=250)
@given(sequences())
def test_binary_round_trip(seq):
    same(loads_binary(dumps_binary(seq)), seq)


def test_files_sniff_format(tmp_path):
    seq = random_seq(label="walk")
    write_sequence(seq, tmp_path / "a.csv")
    write_sequence(seq, tmp_path / "a.trjs")
    assert (tmp_path / "a.csv").read_text().startswith("#TRJSEQ")
    assert (tmp_path / "a.trjs").read_bytes()[:4] == b"TRJS"
    for name in ("a.csv", "a.trjs"):
        same(read_sequence(tmp_path / name), seq)


def test_non_preset_skeleton_written_inline():
    spec = SkeletonSpec("custom", ("a b", "c,d", "e"), (("trunk", (0, 1)), ("left_arm", (2,))))
    seq = MotionSequence(spec, np.arange(6.0).reshape(2, 3, 1).repeat(3, axis=2))
    same(loads_text(dumps_text(seq)), seq)


def test_sequence_written_in_limb_order():
    spec = SkeletonSpec("swapped", ("a", "b", "c"), (("left_arm", (2, 0)), ("trunk", (1,))))
    seq = MotionSequence(spec, np.arange(9.0).reshape(1, 3, 3))
    back = loads_text(dumps_text(seq))
    assert back.spec.joint_names == ("c", "a", "b")
    np.testing.assert_array_equal(back.frames[0], seq.frames[0][[2, 0, 1]])


def test_text_truncation_names_record():
    lines = dumps_text(random_seq(35)).splitlines()
    with pytest.raises(TruncationError) as info:
        loads_text("\n".join(lines[:10]))
    assert "record 10 of 35" in str(info.value) and info.value.line == 11


def test_binary_truncation_names_offset():
    data = dumps_binary(random_seq(35))
    record = 22 * 3 * 8
    with pytest.raises(TruncationError) as info:
        loads_binary(data[:len(data) - 26 * record - 5])
    assert "record 9 of 35" in str(info.value)
    assert info.value.offset == len(data) - 27 * record


def test_units_survive_round_trip():
    seq = random_seq(5, KINECT_18)
    assert loads_text(dumps_text(seq)).units == "meters"
    mm = seq.to_units("millimeters")
    assert loads_binary(dumps_binary(mm)).units == "millimeters"


@pytest.mark.parametrize("mutate, error", [
    (lambda t: t.replace("version=1", "version=7"), VersionError),
    (lambda t: t.replace("#TRJSEQ", "#NOPE"), ParseError),
    (lambda t: t.replace("n_joints=22", "n_joints=21"), ExtentError),
    (lambda t: t + "1,2,3\n", ExtentError),
    (lambda t: t.replace("skeleton=h36m-22", "skeleton=mystery"), ParseError),
])
def test_text_errors(mutate, error):
    with pytest.raises(error):
        loads_text(mutate(dumps_text(random_seq(3))))


def test_text_bad_records():
    lines = dumps_text(random_seq(3)).splitlines()
    bad = lines[:2] + [lines[2].replace(",", ",x", 1)] + lines[3:]
    with pytest.raises(ParseError) as info:
        loads_text("\n".join(bad))
    assert info.value.line == 3
    short = lines[:2] + [lines[2].rsplit(",", 1)[0]] + lines[3:]
    with pytest.raises(ExtentError):
        loads_text("\n".join(short))


def test_binary_errors():
    data = dumps_binary(random_seq(3))
    with pytest.raises(ParseError):
        loads_binary(b"XXXX" + data[4:])
    with pytest.raises(VersionError):
        loads_binary(data[:4] + b"\x02\x00" + data[6:])
    with pytest.raises(ExtentError):
        loads_binary(data + b"\0" * 8)
    with pytest.raises(TruncationError):
        loads_binary(data[:5])


# --- windows -----------------------------------------------------------------------

def test_window_count_example():
    pairs = window_sequence(random_seq(35), 10, 10, 5)
    assert len(pairs) == 4
    assert [p.start for p in pairs] == [0, 5, 10, 15]
    assert len(pairs[0].input) == 10 and len(pairs[0].target) == 10


@settings(max_examples=200)
@given(st.integers(1, 60), st.integers(1, 12), st.integers(1, 12), st.integers(1, 15),
       st.integers(0, 10))
def test_windowing_is_total(length, n_in, n_out, stride, offset):
    seq = random_seq(length, generic_skeleton(2, 1))
    pairs = window_sequence(seq, n_in, n_out, stride, offset)
    span = n_in + n_out
    expected = 0 if length - span < offset else (length - span - offset) // stride + 1
    assert len(pairs) == expected
    for p in pairs:
        assert np.array_equal(np.concatenate([p.input.frames, p.target.frames]),
                              seq.frames[p.start:p.start + span])
    if stride == length:
        assert len(pairs) <= 1


def test_window_stride_must_be_positive():
    with pytest.raises(ConfigError):
        window_sequence(random_seq(), 10, 10, 0)


# --- manifests ---------------------------------------------------------------------

MANIFEST = """# demo
input_frames=10
output_frames=10
stride=5
skeleton=h36m-22
seqs/a.csv,train,walking
seqs/b.trjs,test,eating,3
"""


def test_manifest_parse_and_round_trip(tmp_path):
    m = parse_manifest(MANIFEST, tmp_path)
    assert (m.input_frames, m.output_frames, m.stride, m.skeleton) == (10, 10, 5, "h36m-22")
    assert m.entries[1] == ManifestEntry("seqs/b.trjs", "test", "eating", 3)
    assert [e.path for e in m.select("train")] == ["seqs/a.csv"]
    write_manifest(m, tmp_path / "m.txt")
    back = parse_manifest((tmp_path / "m.txt").read_text(), tmp_path)
    assert back.entries == m.entries and back.stride == 5


@pytest.mark.parametrize("text", ["stride=0", "stride=two", "colour=red",
                                  "a.csv,validation,x", "a.csv,train", "a.csv,train,x,-1"])
def test_manifest_errors(text):
    with pytest.raises(ParseError):
        parse_manifest(text)


def test_manifest_check_and_windows(tmp_path):
    write_sequence(random_seq(35, seed=1), tmp_path / "seqs/a.csv")
    (tmp_path / "m.txt").write_text(MANIFEST)
    with pytest.raises(DataError, match="b.trjs"):
        load_manifest(tmp_path / "m.txt")
    write_sequence(random_seq(30, seed=2), tmp_path / "seqs/b.trjs")
    m = load_manifest(tmp_path / "m.txt")
    train_pairs = window_dataset(m, "train")
    test_pairs = window_dataset(m, "test")
    assert len(train_pairs) == 4 and {p.label for p in train_pairs} == {"walking"}
    assert [p.start for p in test_pairs] == [3, 8]


def test_manifest_skeleton_mismatch(tmp_path):
    write_sequence(random_seq(35, KINECT_18), tmp_path / "seqs/a.csv")
    write_sequence(random_seq(35), tmp_path / "seqs/b.trjs")
    (tmp_path / "m.txt").write_text(MANIFEST)
    with pytest.raises(DataError, match="kinect-18"):
        load_manifest(tmp_path / "m.txt")


def test_manifest_without_windows(tmp_path):
    m = DatasetManifest([ManifestEntry("a", "train", "x")])
    with pytest.raises(UsageError):
        window_dataset(m, sequences={"a": random_seq(5)})


def test_manifest_rejects_commas_on_write(tmp_path):
    with pytest.raises(ConfigError):
        write_manifest(DatasetManifest([ManifestEntry("a,b", "train", "x")]), tmp_path / "m")


# --- checkpoints -------------------------------------------------------------------

SMALL = ModelConfig(input_frames=4, output_frames=3, hidden_channels=4, n_blocks=1)


@pytest.fixture(scope="module")
def checkpoint():
    seqs = generate_synthetic(SynthConfig(n_sequences=2, n_frames=7))
    pairs = [p for s in seqs for p in window_sequence(s, 4, 3, 1)]
    return train(TrajectoryNet(SMALL), pairs, TrainConfig(batch_size=2, max_epochs=2)).checkpoint


def test_checkpoint_save_load_save_is_byte_identical(checkpoint, tmp_path):
    save_checkpoint(checkpoint, tmp_path / "a.trjn")
    back = load_checkpoint(tmp_path / "a.trjn")
    save_checkpoint(back, tmp_path / "b.trjn")
    assert (tmp_path / "a.trjn").read_bytes() == (tmp_path / "b.trjn").read_bytes()
    assert back.config == checkpoint.config and back.epoch == 2
    assert back.history == checkpoint.history and back.rng_state == checkpoint.rng_state
    for k, v in checkpoint.params.items():
        np.testing.assert_array_equal(back.params[k], v)
    assert back.skeleton == H36M_22


def test_checkpoint_prediction_identical_after_reload(checkpoint):
    seq = random_seq(4)
    back = loads_checkpoint(dumps_checkpoint(checkpoint))
    assert predict_checkpoint(back, seq) == predict_checkpoint(checkpoint, seq)


def test_checkpoint_tamper_detected(checkpoint):
    data = bytearray(dumps_checkpoint(checkpoint))
    data[len(data) // 2] ^= 0x01
    with pytest.raises(ChecksumError):
        loads_checkpoint(bytes(data))


def test_checkpoint_framing_errors(checkpoint):
    data = dumps_checkpoint(checkpoint)
    with pytest.raises(MagicError):
        loads_checkpoint(b"ZZZZ" + data[4:])
    with pytest.raises(VersionError):
        loads_checkpoint(data[:4] + b"\x09\x00" + data[6:])
    with pytest.raises(TruncationError):
        loads_checkpoint(data[:10])


def test_short_term_checkpoint_refuses_long_horizon(checkpoint):
    with pytest.raises(ConfigError):
        require_horizon(loads_checkpoint(dumps_checkpoint(checkpoint)), 25)


# --- synthetic data ----------------------------------------------------------------

def test_synthetic_is_deterministic():
    cfg = SynthConfig(n_sequences=3, n_frames=20)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert a == b and [s.label for s in a] == ["synth0000", "synth0001", "synth0002"]
    other = generate_synthetic(SynthConfig(n_sequences=3, n_frames=20, seed=1))
    assert a != other


def test_full_correlation_without_noise_gives_parallel_curves():
    seq = generate_synthetic(SynthConfig(n_sequences=1, correlation=1.0, noise_std=0.0))[0]
    offsets = seq.frames - seq.frames[:, :1]
    np.testing.assert_allclose(offsets, np.broadcast_to(offsets[0], offsets.shape), atol=1e-9)


def test_periodic_autocorrelation_with_small_noise():
    # 1 Hz at 40 ms per frame repeats every 25 frames; noise is 1% of the amplitude.
    cfg = SynthConfig(n_sequences=2, n_frames=200, freq_min_hz=1.0, freq_max_hz=1.0,
                      amp_min=100.0, amp_max=100.0, noise_std=1.0)
    for seq in generate_synthetic(cfg):
        x = seq.frames.reshape(len(seq), -1)
        x = x - x.mean(axis=0)
        a, b = x[:-25].ravel(), x[25:].ravel()
        assert np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b)) > 0.9


def test_synthetic_config_validation():
    for bad in (dict(correlation=1.5), dict(n_frames=0), dict(noise_std=-1.0),
                dict(freq_min_hz=2.0, freq_max_hz=1.0)):
        with pytest.raises(ConfigError):
            SynthConfig(**bad)


def test_synthetic_units_and_skeleton():
    s = generate_synthetic(SynthConfig(n_sequences=1, n_joints=18, units="meters"))[0]
    assert s.spec.name == "kinect-18" and s.units == "meters"


# --- converters --------------------------------------------------------------------

def test_from_array_selects_and_downsamples():
    arr = np.random.default_rng(0).normal(size=(10, 32, 3))
    seq = from_array(arr, "h36m-22", H36M_32_TO_22, frame_interval_ms=20.0, frame_step=2)
    assert len(seq) == 5 and seq.frame_interval_ms == 40.0
    np.testing.assert_array_equal(seq.frames[1, 0], arr[2, H36M_32_TO_22[0]])
    with pytest.raises(DataError):
        from_array(arr[:, :10], "h36m-22", H36M_32_TO_22)

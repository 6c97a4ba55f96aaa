"""Loss, optimisation loop, checkpoints and inference."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, DivergenceError, UnitError, UsageError
from .model import AblationFlags, ModelConfig, TrajectoryNet
from .skeleton import ROOT_JOINT, MotionSequence, SkeletonSpec, convert_units

log = logging.getLogger(__name__)


def mpjpe_loss(pred, target):
    """Mean over joints and future frames of the *squared* joint error.

    pred, target: [.., N_to, D, N_j]; a leading batch axis is averaged.
    """
    if not isinstance(target, T.Tensor):
        target = T.Tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"loss: prediction {pred.shape} vs target {target.shape}")
    n_frames, _, n_joints = pred.shape[-3:]
    batch = int(np.prod(pred.shape[:-3])) if pred.ndim > 3 else 1
    diff = pred - target
    return T.scale(T.tsum(diff * diff), 1.0 / (n_joints * n_frames * batch))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 200
    seed: int = 0
    shuffle: bool = True
    lr_decay: float | None = None
    early_stop_patience: int | None = None
    eval_every: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ConfigError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.lr_decay is not None and not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")


@dataclass
class Preprocessing:
    """Optional per-sample root centring and dataset-level normalisation.

    Both are affine, so predictions are mapped back exactly enough for
    metrics; both are off by default.
    """

    root_center: bool = False
    normalize: bool = False
    offset: list | None = None  # per-coordinate mean, fitted when normalize
    scale: float = 1.0

    @property
    def active(self):
        return self.root_center or self.normalize

    def fit(self, inputs, root_joint=0):
        """Fit normalisation statistics on training input frames [S, T, N_j, D]."""
        if not self.normalize:
            return self
        frames, _, _ = Preprocessing(root_center=self.root_center).forward(inputs, None,
                                                                           root_joint)
        offset = frames.reshape(-1, frames.shape[-1]).mean(axis=0)
        scale = float((frames - offset).std())
        self.offset = [float(v) for v in offset]
        self.scale = scale if scale > 0 else 1.0
        return self

    def forward(self, inputs, targets=None, root_joint=0):
        """Map raw input/target frames into model space; returns (x, y, root)."""
        inputs = np.asarray(inputs)
        root = inputs[..., -1:, root_joint:root_joint + 1, :] if self.root_center else None
        x, y = inputs, targets
        if root is not None:
            x = x - root
            y = None if y is None else y - root
        if self.normalize:
            off = np.asarray(self.offset)
            x = (x - off) / self.scale
            y = None if y is None else (y - off) / self.scale
        return x, y, root

    def inverse(self, frames, root):
        if self.normalize:
            frames = frames * self.scale + np.asarray(self.offset)
        if root is not None:
            frames = frames + root
        return frames


@dataclass
class Checkpoint:
    config: ModelConfig
    ablations: AblationFlags
    params: dict
    adam: T.AdamState
    epoch: int = 0
    history: list = field(default_factory=list)
    eval_history: list = field(default_factory=list)
    rng_state: dict | None = None
    preprocessing: Preprocessing = field(default_factory=Preprocessing)
    skeleton: SkeletonSpec | None = None
    frame_interval_ms: float = 40.0

    @classmethod
    def capture(cls, model, adam, epoch=0, history=(), eval_history=(), rng=None,
                preprocessing=None, skeleton=None, frame_interval_ms=40.0):
        state = T.AdamState(adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon,
                            adam.step, {k: v.copy() for k, v in adam.m.items()},
                            {k: v.copy() for k, v in adam.v.items()})
        rng_state = _copy_rng_state(rng.bit_generator.state) if rng is not None else None
        return cls(ModelConfig(**asdict(model.config)), model.ablations, model.state_dict(),
                   state, epoch, list(history), list(eval_history), rng_state,
                   Preprocessing(**asdict(preprocessing)) if preprocessing else Preprocessing(),
                   skeleton, frame_interval_ms)

    def build_model(self):
        model = TrajectoryNet(ModelConfig(**asdict(self.config)), self.ablations)
        model.load_state_dict(self.params)
        return model

    def rng(self):
        if self.rng_state is None:
            return None
        gen = np.random.Generator(np.random.PCG64())
        gen.bit_generator.state = _copy_rng_state(self.rng_state)
        return gen


def _copy_rng_state(state):
    return {k: (dict(v) if isinstance(v, dict) else v) for k, v in state.items()}


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_mpjpe: float | None
    wall_ms: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    records: list

    @property
    def losses(self):
        return list(self.checkpoint.history)


def _pair_frames(pairs):
    inputs = np.stack([np.asarray(_inp(p).to_limb_order().frames) for p in pairs])
    targets = np.stack([np.asarray(_tgt(p).to_limb_order().frames) for p in pairs])
    return inputs, targets


def _inp(pair):
    return pair.input if hasattr(pair, "input") else pair[0]


def _tgt(pair):
    return pair.target if hasattr(pair, "target") else pair[1]


def prepare_batch(model, input_frames, target_frames=None):
    """Frames [S, T, N_j, D] -> model input array and target [S, N_to, D, N_j]."""
    x = input_frames.transpose(0, 1, 3, 2)  # [S, N_ti, D, N_j]
    if model.ablations.coords_as_channels:
        x = input_frames.transpose(0, 3, 2, 1)  # [S, D, N_j, N_ti]
        tail = np.repeat(x[..., -1:], model.config.output_frames, axis=-1)
        x = np.concatenate([x, tail], axis=-1)
    y = None if target_frames is None else target_frames.transpose(0, 1, 3, 2)
    return np.ascontiguousarray(x), y


def _check_pairs(model, pairs):
    if len(pairs) == 0:
        raise UsageError("training needs at least one (input, target) pair")
    c = model.config
    units = {_inp(p).units for p in pairs} | {_tgt(p).units for p in pairs}
    if len(units) > 1:
        raise UnitError(f"mixed units in dataset: {sorted(units)}")
    for p in pairs:
        if len(_inp(p)) != c.input_frames or len(_tgt(p)) != c.output_frames:
            raise DimensionError(
                f"pair lengths {len(_inp(p))}/{len(_tgt(p))} do not match model "
                f"{c.input_frames}/{c.output_frames}")


def _root_joint(pairs):
    return ROOT_JOINT.get(_inp(pairs[0]).spec.name, 0)


def predict_frames(model, input_frames, preprocessing=None, root_joint=0, batch_size=64):
    """Evaluation-mode predictions for raw frames [S, N_ti, N_j, D] -> [S, N_to, N_j, D]."""
    prep = preprocessing or Preprocessing()
    x_frames, _, root = prep.forward(input_frames, root_joint=root_joint)
    outs = []
    for start in range(0, len(x_frames), batch_size):
        x, _ = prepare_batch(model, x_frames[start:start + batch_size])
        outs.append(model.forward_tensor(x).data.transpose(0, 1, 3, 2))
    pred = np.concatenate(outs) if outs else np.zeros((0,))
    return prep.inverse(pred, root)


def eval_mpjpe_mm(model, pairs, preprocessing=None):
    """Mean unsquared joint error in millimetres over all pairs, frames and joints."""
    inputs, targets = _pair_frames(pairs)
    pred = predict_frames(model, inputs, preprocessing, _root_joint(pairs))
    units = _inp(pairs[0]).units
    err = convert_units(pred - targets, units, "millimeters")
    return float(np.linalg.norm(err, axis=-1).mean())


def train(model, pairs, cfg=None, *, eval_pairs=None, resume=None, preprocessing=None,
          log_path=None, on_epoch=None):
    """Mini-batch Adam on the mean squared-joint-error loss.

    Mutates ``model``. Shuffling and dropout masks come from one generator
    seeded by ``cfg.seed`` (or restored from ``resume``), so runs are
    bit-reproducible. Raises ``DivergenceError`` carrying the last finite
    checkpoint if the loss stops being finite.
    """
    cfg = cfg or TrainConfig()
    pairs = list(pairs)
    _check_pairs(model, pairs)
    skeleton = _inp(pairs[0]).spec.limb_ordered()
    interval = _inp(pairs[0]).frame_interval_ms
    root_joint = _root_joint(pairs)
    inputs, targets = _pair_frames(pairs)

    if resume is not None:
        if resume.config != model.config or resume.ablations != model.ablations:
            raise ConfigError("checkpoint architecture does not match the model")
        model.load_state_dict(resume.params)
        adam = T.Adam(model.params, state=_clone_adam(resume.adam))
        rng = resume.rng() or np.random.default_rng([cfg.seed, 1])
        prep = Preprocessing(**asdict(resume.preprocessing))
        epoch, history, eval_history = resume.epoch, list(resume.history), list(resume.eval_history)
    else:
        adam = T.Adam(model.params, lr=cfg.learning_rate)
        rng = np.random.default_rng([cfg.seed, 1])
        prep = Preprocessing(**asdict(preprocessing)) if preprocessing else Preprocessing()
        if prep.normalize and prep.offset is None:
            prep.fit(inputs, root_joint)
        epoch, history, eval_history = 0, [], []

    x_all, y_all = prepare_batch(model, *prep.forward(inputs, targets, root_joint)[:2])
    n = len(pairs)
    records = []
    best, stale = np.inf, 0

    def snapshot():
        return Checkpoint.capture(model, adam.state, epoch, history, eval_history, rng, prep,
                                  skeleton, interval)

    last_good = snapshot()
    writer = _CsvLog(log_path) if log_path else None
    try:
        while epoch < cfg.max_epochs:
            t0 = time.perf_counter()
            order = rng.permutation(n) if cfg.shuffle else np.arange(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                adam.zero_grad()
                pred = model.forward_tensor(x_all[idx], training=True, rng=rng)
                loss = mpjpe_loss(pred, y_all[idx])
                value = float(loss.data)
                if not np.isfinite(value):
                    raise DivergenceError(f"non-finite loss at epoch {epoch + 1}", last_good)
                T.backward(loss)
                adam.step()
                total += value * len(idx)
            epoch += 1
            history.append(total / n)
            eval_value = None
            if eval_pairs and epoch % cfg.eval_every == 0:
                eval_value = eval_mpjpe_mm(model, eval_pairs, prep)
                eval_history.append((epoch, eval_value))
            if not all(np.isfinite(p.data).all() for p in model.params.values()):
                raise DivergenceError(f"non-finite parameters at epoch {epoch}", last_good)
            if cfg.lr_decay:
                adam.lr = adam.lr * cfg.lr_decay
            last_good = snapshot()
            record = EpochRecord(epoch, history[-1], eval_value,
                                 (time.perf_counter() - t0) * 1000.0)
            records.append(record)
            if writer:
                writer.write(record)
            if on_epoch:
                on_epoch(record)
            log.debug("epoch %d loss %.6g eval %s", epoch, history[-1], eval_value)
            if cfg.early_stop_patience and eval_value is not None:
                if eval_value < best:
                    best, stale = eval_value, 0
                else:
                    stale += 1
                    if stale >= cfg.early_stop_patience:
                        log.info("early stop at epoch %d", epoch)
                        break
    finally:
        if writer:
            writer.close()
    return TrainResult(last_good, records)


def _clone_adam(state):
    return T.AdamState(state.learning_rate, state.beta1, state.beta2, state.epsilon, state.step,
                       {k: v.copy() for k, v in state.m.items()},
                       {k: v.copy() for k, v in state.v.items()})


class _CsvLog:
    """Append-only per-epoch log: epoch, train_loss, eval_mpjpe, wall_ms."""

    def __init__(self, path):
        path = Path(path)
        new = not path.exists()
        self._fh = path.open("a", newline="")
        self._w = csv.writer(self._fh)
        if new:
            self._w.writerow(["epoch", "train_loss", "eval_mpjpe", "wall_ms"])

    def write(self, r):
        self._w.writerow([r.epoch, repr(r.train_loss),
                          "" if r.eval_mpjpe is None else repr(r.eval_mpjpe),
                          f"{r.wall_ms:.1f}"])
        self._fh.flush()

    def close(self):
        self._fh.close()


def predict(model, seq, preprocessing=None):
    """Deterministic forecast of ``output_frames`` poses following ``seq``."""
    model.prepare_input(seq)  # length / skeleton checks
    seq = seq.to_limb_order()
    root_joint = ROOT_JOINT.get(seq.spec.name, 0)
    pred = predict_frames(model, seq.frames[None], preprocessing, root_joint)[0]
    return MotionSequence(seq.spec, pred, seq.frame_interval_ms, seq.label)


def predict_checkpoint(ckpt, seq):
    """Predict with a checkpoint, refusing requests its config cannot serve."""
    c = ckpt.config
    if len(seq) != c.input_frames:
        raise DimensionError(f"checkpoint expects {c.input_frames} input frames, got {len(seq)}")
    if ckpt.skeleton is not None and not ckpt.skeleton.compatible(seq.spec.limb_ordered()):
        raise DimensionError(f"sequence skeleton {seq.spec.name!r} does not match checkpoint "
                             f"skeleton {ckpt.skeleton.name!r}")
    return predict(ckpt.build_model(), seq, ckpt.preprocessing)


def require_horizon(ckpt, output_frames):
    if ckpt.config.output_frames != output_frames:
        raise ConfigError(f"checkpoint predicts {ckpt.config.output_frames} frames, "
                          f"{output_frames} requested")

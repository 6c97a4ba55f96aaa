"""Seeded synthetic motion with limb-correlated sinusoidal trajectories.

Each sequence mixes one body-wide sinusoid with one independent sinusoid
per limb. Joints of a limb follow their limb's component with a small
phase lag that grows away from the torso, so neighbouring joints (which
are adjacent on the joint axis) move together.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..skeleton import MotionSequence, skeleton_for


@dataclass
class SynthConfig:
    n_sequences: int = 200
    n_frames: int = 50
    n_joints: int = 22
    dim: int = 3
    frame_interval_ms: float = 40.0
    freq_min_hz: float = 0.5
    freq_max_hz: float = 1.5
    amp_min: float = 40.0
    amp_max: float = 120.0
    correlation: float = 0.5
    joint_lag: float = 0.35  # max phase lag (radians) per joint step along a limb
    noise_std: float = 2.0
    body_scale: float = 400.0  # spread of the rest pose
    units: str = "millimeters"
    seed: int = 0

    def __post_init__(self):
        if self.n_sequences < 1 or self.n_frames < 1:
            raise ConfigError("n_sequences and n_frames must be positive")
        if not 0.0 <= self.correlation <= 1.0:
            raise ConfigError(f"correlation must lie in [0, 1], got {self.correlation}")
        if self.freq_min_hz <= 0 or self.freq_max_hz < self.freq_min_hz:
            raise ConfigError("need 0 < freq_min_hz <= freq_max_hz")
        if self.amp_min < 0 or self.amp_max < self.amp_min:
            raise ConfigError("need 0 <= amp_min <= amp_max")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")

    def to_dict(self):
        return asdict(self)


def _sinusoid(rng, cfg, t):
    """[T, D] sinusoid with one frequency and per-axis amplitude/phase."""
    freq = rng.uniform(cfg.freq_min_hz, cfg.freq_max_hz)
    amp = rng.uniform(cfg.amp_min, cfg.amp_max, size=cfg.dim)
    phase = rng.uniform(0.0, 2 * np.pi, size=cfg.dim)
    return freq, amp, phase


def _evaluate(freq, amp, phase, t, lag=0.0):
    return amp * np.sin(2 * np.pi * freq * t[:, None] + phase - lag)


def generate_synthetic(cfg):
    """List of ``cfg.n_sequences`` MotionSequences; a pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    spec = skeleton_for(cfg.n_joints, cfg.dim, cfg.units)
    rest = rng.normal(0.0, cfg.body_scale, size=(cfg.n_joints, cfg.dim))
    t = np.arange(cfg.n_frames) * cfg.frame_interval_ms / 1000.0
    own_weight = np.sqrt(1.0 - cfg.correlation ** 2)
    sequences = []
    for s in range(cfg.n_sequences):
        shared = _evaluate(*_sinusoid(rng, cfg, t), t)
        frames = np.empty((cfg.n_frames, cfg.n_joints, cfg.dim))
        for _, joints in spec.limbs:
            limb = _sinusoid(rng, cfg, t)
            step = rng.uniform(0.0, cfg.joint_lag)
            for k, j in enumerate(joints):
                own = _evaluate(*limb, t, lag=k * step)
                frames[:, j] = rest[j] + cfg.correlation * shared + own_weight * own
        if cfg.noise_std > 0:
            frames += rng.normal(0.0, cfg.noise_std, size=frames.shape)
        sequences.append(MotionSequence(spec, frames, cfg.frame_interval_ms, label=f"synth{s:04d}"))
    return sequences

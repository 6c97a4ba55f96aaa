"""Desk-scale experiments shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data.manifest import window_sequence
from .data.synthetic import SynthConfig, generate_synthetic
from .evaluation import ablation_sweep, evaluate_model, evaluate_zero_velocity
from .model import ModelConfig, TrajectoryNet, variant
from .training import TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class SyntheticSplit:
    """Seeded synthetic data split by sequence, then windowed."""

    synth: SynthConfig = field(default_factory=SynthConfig)
    test_fraction: float = 0.2
    input_frames: int = 10
    output_frames: int = 10
    stride: int = 10

    def build(self):
        seqs = generate_synthetic(self.synth)
        n_test = max(1, int(round(len(seqs) * self.test_fraction)))
        train_seqs, test_seqs = seqs[:-n_test], seqs[-n_test:]
        return self._windows(train_seqs), self._windows(test_seqs)

    def _windows(self, seqs):
        pairs = []
        for s in seqs:
            pairs.extend(window_sequence(s, self.input_frames, self.output_frames, self.stride,
                                         label=s.label))
        return pairs


def overfit_one(seed=0, epochs=500, model_config=None, train_config=None, synth_seed=0):
    """Train on a single pair; returns (initial loss, final loss, seconds).

    Initial loss is the first epoch's training loss.
    """
    seq = generate_synthetic(SynthConfig(n_sequences=1, n_frames=20, seed=synth_seed))[0]
    pair = window_sequence(seq, 10, 10, 10)[0]
    model = TrajectoryNet(model_config or ModelConfig(), seed=seed)
    cfg = train_config or TrainConfig(batch_size=1, max_epochs=epochs, seed=seed)
    t0 = time.perf_counter()
    result = train(model, [pair], cfg)
    return result.losses[0], result.losses[-1], time.perf_counter() - t0


@dataclass
class BaselineResult:
    model_mpjpe: float
    baseline_mpjpe: float
    seconds: float
    losses: list

    @property
    def ratio(self):
        return self.model_mpjpe / self.baseline_mpjpe


def beat_zero_velocity(split=None, train_config=None, seed=0):
    """Default model vs. the zero-velocity baseline on held-out windows (average MPJPE, mm)."""
    split = split or SyntheticSplit()
    train_pairs, test_pairs = split.build()
    cfg = train_config or TrainConfig(seed=seed)
    model = TrajectoryNet(ModelConfig(input_frames=split.input_frames,
                                      output_frames=split.output_frames), seed=seed)
    t0 = time.perf_counter()
    result = train(model, train_pairs, cfg)
    model.load_state_dict(result.checkpoint.params)
    ours = evaluate_model(model, test_pairs, result.checkpoint.preprocessing)["all"]
    zero = evaluate_zero_velocity(test_pairs)
    return BaselineResult(ours["mpjpe_mm"].average, zero["mpjpe_mm"].average,
                          time.perf_counter() - t0, result.losses)


def _cell_key(name, base):
    config, flags = variant(name, base)
    return tuple(sorted(config.to_dict().items())), flags


DIRECTION_PAIRS = (("WS", "RS"), ("WGCOT-1", "RGCOT-1"), ("WSRC", "RSRC"))


@dataclass
class DirectionResult:
    per_seed: list          # one {variant: average MAE} dict per seed
    votes: dict             # (with, removed) -> wins for the full model
    seconds: float

    def holds(self, pair):
        return self.votes[pair] * 2 > len(self.per_seed)


def ablation_directions(seeds=(0, 1, 2), split=None, train_config=None, metric="mae_m",
                        pairs=DIRECTION_PAIRS):
    """Majority vote over seeds on 'full model error <= ablated error'.

    Each seed changes the synthetic data, the initialisation and the data
    order together; within one seed every variant sees identical inputs.
    """
    split = split or SyntheticSplit()
    names = [n for pair in pairs for n in pair]
    t0 = time.perf_counter()
    per_seed = []
    for seed in seeds:
        s = replace(split, synth=replace(split.synth, seed=seed))
        train_pairs, test_pairs = s.build()
        base = ModelConfig(input_frames=s.input_frames, output_frames=s.output_frames)
        cfg = replace(train_config or TrainConfig(), seed=seed)
        # WS and WSRC name the same network; train each distinct cell once.
        cells = {}
        for name in names:
            cells.setdefault(_cell_key(name, base), name)
        rows = ablation_sweep(train_pairs, test_pairs, base, list(cells.values()), cfg,
                              model_seed=seed)
        by_name = {r.variant: r for r in rows}
        scores = {}
        for name in names:
            r = by_name[cells[_cell_key(name, base)]]
            scores[name] = np.inf if r.divergent else r.reports[metric].average
        log.info("seed %d: %s", seed, scores)
        per_seed.append(scores)
    votes = {p: sum(sc[p[0]] <= sc[p[1]] for sc in per_seed) for p in pairs}
    return DirectionResult(per_seed, votes, time.perf_counter() - t0)

"""Metrics, per-horizon reports, the zero-velocity baseline and ablation sweeps.

MPJPE here is the unsquared Euclidean joint error in millimetres (the
squared form is only the training loss). MSE and MAE are per-coordinate
errors in metres, averaged within a sequence and then across sequences.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, TrajNetError, UnitError
from .model import TrajectoryNet, variant
from .skeleton import MotionSequence, convert_units as _to_units
from .training import TrainConfig, predict_frames, train, _pair_frames, _root_joint

log = logging.getLogger(__name__)

METRIC_KINDS = ("mpjpe_mm", "mse_m", "mae_m")
TABLE_FRAMES = (2, 4, 8, 10)


@dataclass
class MetricReport:
    """Metric values keyed by horizon.

    Keys are milliseconds for MPJPE and frame labels ("F_3") for MSE/MAE;
    ``average`` is the plain mean of ``per_horizon``.
    """

    per_horizon: dict
    average: float
    metric_kind: str
    n_sequences: int
    action_label: str | None = None

    def __post_init__(self):
        if self.metric_kind not in METRIC_KINDS:
            raise ValueError(f"metric_kind must be one of {METRIC_KINDS}")

    @classmethod
    def from_values(cls, per_horizon, metric_kind, n_sequences, action_label=None):
        values = [float(v) for v in per_horizon.values()]
        average = float(np.mean(values)) if values else float("nan")
        return cls({k: float(v) for k, v in per_horizon.items()}, average, metric_kind,
                   n_sequences, action_label)

    def recomputed_average(self):
        return float(np.mean(list(self.per_horizon.values())))

    def columns(self, keys=None):
        keys = list(self.per_horizon) if keys is None else list(keys)
        return {str(k): self.per_horizon[k] for k in keys} | {"average": self.average}

    def to_dict(self):
        d = asdict(self)
        d["per_horizon"] = {str(k): v for k, v in self.per_horizon.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        per = {(_key(k)): v for k, v in d["per_horizon"].items()}
        return cls(per, d["average"], d["metric_kind"], d["n_sequences"], d.get("action_label"))


def _key(k):
    try:
        f = float(k)
    except ValueError:
        return k
    return int(f) if f.is_integer() else f


def _as_list(x):
    return [x] if isinstance(x, MotionSequence) else list(x)


def _stack_pair(preds, targets, units, convert_units):
    preds, targets = _as_list(preds), _as_list(targets)
    if len(preds) != len(targets) or not preds:
        raise DimensionError(f"need equally many predictions and targets, got "
                             f"{len(preds)} and {len(targets)}")
    out_p, out_t = [], []
    for p, t in zip(preds, targets):
        if len(p) != len(t):
            raise DimensionError(f"prediction has {len(p)} frames, target {len(t)}")
        if not p.spec.compatible(t.spec):
            raise DataError(f"skeletons differ: {p.spec.name!r} vs {t.spec.name!r}")
        if not convert_units and p.units != t.units:
            raise UnitError(f"prediction in {p.units}, target in {t.units}")
        out_p.append(_to_units(p.frames, p.units, units))
        out_t.append(_to_units(t.frames, t.units, units))
    return np.stack(out_p), np.stack(out_t), preds[0].frame_interval_ms


def per_frame_mpjpe(pred, target):
    """[.., T, N_j, D] arrays -> [.., T] mean unsquared joint error."""
    return np.linalg.norm(pred - target, axis=-1).mean(axis=-1)


def mpjpe(preds, targets, horizon_frames=None, convert_units=True, action_label=None):
    """Per-horizon MPJPE in millimetres.

    ``horizon_frames`` are 1-based future frame indices (default: all);
    report keys are ``frame * frame_interval_ms``. Accepts one sequence
    pair or equal-length lists of them.
    """
    p, t, interval = _stack_pair(preds, targets, "millimeters", convert_units)
    curve = per_frame_mpjpe(p, t).mean(axis=0)
    frames = range(1, len(curve) + 1) if horizon_frames is None else horizon_frames
    per = {}
    for n in frames:
        if not 1 <= n <= len(curve):
            raise DimensionError(f"horizon frame {n} outside 1..{len(curve)}")
        per[_key(n * interval)] = curve[n - 1]
    return MetricReport.from_values(per, "mpjpe_mm", len(p), action_label)


def mse_mae(pred, target, convert_units=True):
    """(mse, mae) in metres for one sequence pair."""
    p, t, _ = _stack_pair(pred, target, "meters", convert_units)
    err = p[0] - t[0]
    return float(np.mean(err ** 2)), float(np.mean(np.abs(err)))


def mse_mae_reports(preds, targets, convert_units=True, action_label=None):
    """Per-frame (F_1..F_N) MSE and MAE reports in metres; averages span all frames."""
    p, t, _ = _stack_pair(preds, targets, "meters", convert_units)
    err = p - t
    mse = (err ** 2).mean(axis=(2, 3)).mean(axis=0)
    mae = np.abs(err).mean(axis=(2, 3)).mean(axis=0)
    keys = [f"F_{i}" for i in range(1, len(mse) + 1)]
    return (MetricReport.from_values(dict(zip(keys, mse)), "mse_m", len(p), action_label),
            MetricReport.from_values(dict(zip(keys, mae)), "mae_m", len(p), action_label))


def zero_velocity_baseline(seq, n_future):
    """``n_future`` copies of the last observed pose."""
    if n_future < 1:
        raise ValueError("n_future must be positive")
    frames = np.repeat(seq.frames[-1:], n_future, axis=0)
    return MotionSequence(seq.spec, frames, seq.frame_interval_ms, seq.label)


def default_horizons(n_frames):
    """Frames shown in the short-term tables (2, 4, 8, 10), clipped to the output length."""
    hs = [h for h in TABLE_FRAMES if h <= n_frames]
    if n_frames > TABLE_FRAMES[-1]:
        hs.append(n_frames)
    return hs


def evaluate_predictions(preds, targets, horizon_frames=None, action_label=None):
    """MPJPE, MSE and MAE reports for matching prediction/target lists."""
    n = len(_as_list(targets)[0])
    horizons = horizon_frames or default_horizons(n)
    mse, mae = mse_mae_reports(preds, targets, action_label=action_label)
    return {"mpjpe_mm": mpjpe(preds, targets, horizons, action_label=action_label),
            "mse_m": mse, "mae_m": mae}


def predict_pairs(model, pairs, preprocessing=None):
    inputs, _ = _pair_frames(pairs)
    pred = predict_frames(model, inputs, preprocessing, _root_joint(pairs))
    out = []
    for frames, pair in zip(pred, pairs):
        tgt = pair[1] if not hasattr(pair, "target") else pair.target
        out.append(MotionSequence(tgt.spec.limb_ordered(), frames, tgt.frame_interval_ms,
                                  tgt.label))
    return out


def evaluate_model(model, pairs, preprocessing=None, horizon_frames=None, by_action=False):
    """Reports for ``model`` on ``pairs``; with ``by_action`` one set per label too."""
    preds = predict_pairs(model, pairs, preprocessing)
    targets = [p.target.to_limb_order() if hasattr(p, "target") else p[1].to_limb_order()
               for p in pairs]
    result = {"all": evaluate_predictions(preds, targets, horizon_frames)}
    if by_action:
        labels = sorted({getattr(p, "label", None) or "" for p in pairs})
        for label in labels:
            idx = [i for i, p in enumerate(pairs) if (getattr(p, "label", None) or "") == label]
            result[label] = evaluate_predictions([preds[i] for i in idx],
                                                 [targets[i] for i in idx],
                                                 horizon_frames, action_label=label)
    return result


def evaluate_zero_velocity(pairs, horizon_frames=None):
    preds = [zero_velocity_baseline(p[0] if not hasattr(p, "input") else p.input,
                                    len(p[1] if not hasattr(p, "target") else p.target))
             for p in pairs]
    targets = [p[1] if not hasattr(p, "target") else p.target for p in pairs]
    return evaluate_predictions(preds, targets, horizon_frames)


# --- ablation sweep ---------------------------------------------------------

@dataclass
class SweepRow:
    variant: str
    reports: dict = field(default_factory=dict)  # metric kind -> MetricReport
    divergent: bool = False
    error: str | None = None
    parameters: int = 0


def ablation_sweep(train_pairs, test_pairs, base_config, variants, cfg=None,
                   model_seed=0, preprocessing=None):
    """Train and evaluate each named variant with the same seed and data order.

    A failing cell is recorded as divergent; the others still run. Rows
    come back in the order of ``variants``.
    """
    cfg = cfg or TrainConfig()
    rows = []
    for name in variants:
        config, flags = variant(name, base_config)
        model = TrajectoryNet(config, flags, seed=model_seed)
        row = SweepRow(name, parameters=model.count_parameters())
        try:
            result = train(model, train_pairs, cfg, preprocessing=preprocessing)
            model.load_state_dict(result.checkpoint.params)
            row.reports = evaluate_model(model, test_pairs,
                                         result.checkpoint.preprocessing)["all"]
        except TrajNetError as exc:
            log.warning("ablation cell %s failed: %s", name, exc)
            row.divergent, row.error = True, str(exc)
        rows.append(row)
    return rows


def sweep_table(rows, metric_kind, columns=None):
    """Rows of dicts shaped like the ablation tables: variant, columns..., average."""
    table = []
    for row in rows:
        if row.divergent:
            table.append({"variant": row.variant, "status": "divergent"})
            continue
        rep = row.reports[metric_kind]
        if columns is None:
            keys = [k for k in (f"F_{i}" for i in TABLE_FRAMES) if k in rep.per_horizon] \
                if metric_kind != "mpjpe_mm" else list(rep.per_horizon)
        else:
            keys = columns
        table.append({"variant": row.variant, "status": "ok"} | rep.columns(keys))
    return table


def table_to_csv(table):
    keys = []
    for row in table:
        keys.extend(k for k in row if k not in keys)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    writer.writeheader()
    for row in table:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def reports_to_csv(reports, label_key="label"):
    """CSV with one row per (label, report): label, metric, horizon columns, average."""
    table = []
    for label, rep in reports:
        table.append({label_key: label, "metric": rep.metric_kind} | rep.columns())
    return table_to_csv(table)


def write_reports(reports, out_dir, stem="metrics"):
    """Write ``<stem>_<kind>.csv`` per metric kind plus ``<stem>.json``.

    ``reports`` is a list of (label, MetricReport). Returns the written paths.
    """
    out_dir = Path(out_dir)
    paths = []
    for kind in METRIC_KINDS:
        subset = [(label, rep) for label, rep in reports if rep.metric_kind == kind]
        if subset:
            path = out_dir / f"{stem}_{kind}.csv"
            path.write_text(reports_to_csv(subset))
            paths.append(path)
    doc = [{"label": label} | rep.to_dict() for label, rep in reports]
    path = out_dir / f"{stem}.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return paths + [path]


def read_reports_json(path):
    return [(d.pop("label"), MetricReport.from_dict(d))
            for d in json.loads(Path(path).read_text())]


def with_label(report, label):
    return replace(report, action_label=label)

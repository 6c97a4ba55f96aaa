"""Command-line entry point: ``trajnet <subcommand> [flags]``.

Experiments are described by a key-value config file (``key = value``,
``#`` comments). Keys are grouped by prefix::

    seed = 0                 # the single randomness knob
    horizon = short          # short (10 frames) or long (25 frames)
    ablation = WS            # named ablation cell
    model.hidden_channels = 64
    train.learning_rate = 1e-4
    synth.n_sequences = 200
    data.manifest = data/manifest.txt
    prep.root_center = false

Command-line flags override file keys. Every run writes the fully
resolved key set to ``<out>/resolved_config.txt``. Failures print one
JSON line on stderr and exit with 2 (configuration), 3 (data) or
4 (numeric divergence). ``TRAJNET_LOG_LEVEL`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

from .data.checkpoint_io import load_checkpoint, save_checkpoint
from .data.manifest import DatasetManifest, ManifestEntry, load_manifest, window_dataset, \
    write_manifest
from .data.sequence_io import read_sequence, write_sequence
from .data.synthetic import SynthConfig, generate_synthetic
from .errors import ConfigError, DataError, TrajNetError, UsageError
from .evaluation import (TABLE_FRAMES, ablation_sweep, evaluate_model, evaluate_zero_velocity,
                         sweep_table, table_to_csv, write_reports)
from .model import VARIANTS, ModelConfig, TrajectoryNet, empirical_receptive_field, variant
from .training import Preprocessing, TrainConfig, predict_checkpoint, train

log = logging.getLogger("trajnet")

HORIZONS = {"short": 10, "long": 25}
SECTIONS = {"model": ModelConfig, "train": TrainConfig, "synth": SynthConfig,
            "prep": Preprocessing}
# Seeds funnel through the top-level key; offsets/scales are fitted, not configured.
EXCLUDED = {"train.seed", "synth.seed", "prep.offset", "prep.scale"}
DATA_KEYS = {"data.manifest": None, "data.split": "test", "data.format": "text",
             "data.test_fraction": 0.2, "data.stride": 10}
TOP_KEYS = {"seed": 0, "horizon": "short", "ablation": "WS",
            "ablate.variants": ",".join(VARIANTS)}


# --- configuration -----------------------------------------------------------

def _defaults():
    out = dict(TOP_KEYS) | dict(DATA_KEYS)
    for prefix, cls in SECTIONS.items():
        for f in fields(cls):
            key = f"{prefix}.{f.name}"
            if key not in EXCLUDED:
                out[key] = getattr(cls(), f.name)
    out.pop("model.output_frames")  # set by horizon
    return out


def _types():
    types = {}
    for prefix, cls in SECTIONS.items():
        for f in fields(cls):
            types[f"{prefix}.{f.name}"] = str(f.type)
    return types


def _coerce(key, raw, type_name):
    raw = raw.strip()
    if "None" in type_name and raw.lower() in ("none", ""):
        return None
    try:
        if type_name.startswith("bool"):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if type_name.startswith("int"):
            return int(raw)
        if type_name.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {type_name}") from None
    return raw


def parse_config_text(text):
    """Key-value text -> dict of raw strings; unknown keys are rejected."""
    known = set(_defaults()) | {"model.output_frames"}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        out[key] = value
    return out


def resolve_config(file_values=None, overrides=None):
    """Defaults <- file values <- overrides, typed and cross-checked."""
    cfg = _defaults()
    types = _types()
    raw = dict(file_values or {}) | {k: v for k, v in (overrides or {}).items() if v is not None}
    for key, value in raw.items():
        if not isinstance(value, str):
            cfg[key] = value
        elif key in types:
            cfg[key] = _coerce(key, value, types[key])
        elif key in ("seed", "data.stride"):
            cfg[key] = _coerce(key, value, "int")
        elif key == "data.test_fraction":
            cfg[key] = _coerce(key, value, "float")
        else:
            cfg[key] = value
    if cfg["horizon"] not in HORIZONS:
        raise ConfigError(f"horizon must be one of {sorted(HORIZONS)}, got {cfg['horizon']!r}")
    out_frames = HORIZONS[cfg["horizon"]]
    if cfg.get("model.output_frames", out_frames) != out_frames:
        raise ConfigError(f"model.output_frames={cfg['model.output_frames']} contradicts "
                          f"horizon={cfg['horizon']}")
    cfg["model.output_frames"] = out_frames
    if cfg["ablation"] not in VARIANTS:
        raise ConfigError(f"unknown ablation {cfg['ablation']!r}; known: {list(VARIANTS)}")
    for name in _variant_list(cfg):
        if name not in VARIANTS:
            raise ConfigError(f"unknown ablation {name!r} in ablate.variants")
    if cfg["data.format"] not in ("text", "binary"):
        raise ConfigError("data.format must be text or binary")
    if not 0.0 <= cfg["data.test_fraction"] < 1.0:
        raise ConfigError("data.test_fraction must lie in [0, 1)")
    if cfg["data.stride"] < 1:
        raise ConfigError("data.stride must be positive")
    return cfg


def _variant_list(cfg):
    return [v.strip() for v in cfg["ablate.variants"].split(",") if v.strip()]


def section(cfg, prefix):
    cls = SECTIONS[prefix]
    values = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith(prefix + ".")}
    if prefix in ("train", "synth"):
        values["seed"] = cfg["seed"]
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def model_config(cfg):
    base = section(cfg, "model")
    base.validate()
    return variant(cfg["ablation"], base)


def dumps_config(cfg):
    lines = ["# resolved trajnet configuration"]
    for key in sorted(cfg):
        value = cfg[key]
        lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"


def _out_dir(args, required=True):
    if args.out is None:
        if required:
            raise UsageError("--out is required")
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args):
    file_values = {}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        file_values = parse_config_text(text)
    overrides = {"seed": args.seed, "ablation": getattr(args, "ablation", None),
                 "horizon": getattr(args, "horizon", None),
                 "data.manifest": getattr(args, "manifest", None)}
    return resolve_config(file_values, overrides)


def _write_resolved(out, cfg):
    if out is not None:
        (out / "resolved_config.txt").write_text(dumps_config(cfg))


def _pairs(manifest_path, split, input_frames, output_frames):
    manifest = load_manifest(manifest_path)
    manifest = replace(manifest, input_frames=input_frames, output_frames=output_frames)
    return window_dataset(manifest, split)


# --- subcommands --------------------------------------------------------------

def cmd_gen_synth(args, cfg):
    out = _out_dir(args)
    synth = section(cfg, "synth")
    seqs = generate_synthetic(synth)
    n_test = int(round(len(seqs) * cfg["data.test_fraction"]))
    suffix = ".trjs" if cfg["data.format"] == "binary" else ".csv"
    entries = []
    for i, seq in enumerate(seqs):
        rel = f"seqs/{seq.label}{suffix}"
        write_sequence(seq, out / rel)
        split = "test" if i >= len(seqs) - n_test else "train"
        entries.append(ManifestEntry(rel, split, "synthetic"))
    manifest = DatasetManifest(entries, cfg["model.input_frames"], cfg["model.output_frames"],
                               cfg["data.stride"], seqs[0].spec.name)
    write_manifest(manifest, out / "manifest.txt")
    _write_resolved(out, cfg)
    print(f"wrote {len(seqs)} sequences ({n_test} test) and {out / 'manifest.txt'}")


def cmd_train(args, cfg):
    out = _out_dir(args)
    if not cfg["data.manifest"]:
        raise UsageError("training needs data.manifest (or --manifest)")
    config, flags = model_config(cfg)
    tcfg = section(cfg, "train")
    prep = section(cfg, "prep")
    train_pairs = _pairs(cfg["data.manifest"], "train", config.input_frames,
                         config.output_frames)
    eval_pairs = None
    manifest = load_manifest(cfg["data.manifest"])
    if manifest.select("test"):
        eval_pairs = _pairs(cfg["data.manifest"], "test", config.input_frames,
                            config.output_frames)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        if resume.config != config or resume.ablations != flags:
            raise ConfigError("--resume checkpoint was trained with a different architecture")
    model = TrajectoryNet(config, flags, seed=cfg["seed"])
    _write_resolved(out, cfg)
    log_path = out / "train_log.csv"
    if resume is None and log_path.exists():
        log_path.unlink()
    try:
        result = train(model, train_pairs, tcfg, eval_pairs=eval_pairs, resume=resume,
                       preprocessing=prep, log_path=log_path)
    except TrajNetError as exc:
        ckpt = getattr(exc, "checkpoint", None)
        if ckpt is not None:
            save_checkpoint(ckpt, out / "last_good.trjn")
        raise
    save_checkpoint(result.checkpoint, out / "checkpoint.trjn")
    losses = result.losses
    summary = {"epochs": result.checkpoint.epoch, "initial_loss": losses[0] if losses else None,
               "final_loss": losses[-1] if losses else None,
               "parameters": model.count_parameters(), "variant": cfg["ablation"]}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"trained {cfg['ablation']} for {summary['epochs']} epochs; "
          f"final loss {summary['final_loss']!r}")


def cmd_eval(args, cfg):
    out = _out_dir(args)
    if not args.checkpoint:
        raise UsageError("eval needs --checkpoint")
    if not cfg["data.manifest"]:
        raise UsageError("eval needs data.manifest (or --manifest)")
    ckpt = load_checkpoint(args.checkpoint)
    c = ckpt.config
    pairs = _pairs(cfg["data.manifest"], cfg["data.split"] or None, c.input_frames,
                   c.output_frames)
    spec = pairs[0].input.spec.limb_ordered()
    if ckpt.skeleton is not None and not ckpt.skeleton.compatible(spec):
        raise DataError(f"manifest skeleton {spec.name!r} does not match checkpoint skeleton "
                        f"{ckpt.skeleton.name!r}")
    if ckpt.skeleton is not None and ckpt.skeleton.units != spec.units:
        raise DataError(f"manifest units {spec.units} differ from training units "
                        f"{ckpt.skeleton.units}")
    model = ckpt.build_model()
    results = evaluate_model(model, pairs, ckpt.preprocessing, by_action=True)
    baseline = evaluate_zero_velocity(pairs)
    reports = []
    for label, reps in results.items():
        for kind in ("mpjpe_mm", "mse_m", "mae_m"):
            reports.append((label, reps[kind]))
    for kind in ("mpjpe_mm", "mse_m", "mae_m"):
        reports.append(("zero_velocity", baseline[kind]))
    write_reports(reports, out)
    _write_resolved(out, cfg)
    rep = results["all"]["mpjpe_mm"]
    cols = " ".join(f"{k}ms={v:.2f}" for k, v in rep.per_horizon.items())
    print(f"MPJPE (mm) {cols} average={rep.average:.2f} over {rep.n_sequences} windows; "
          f"zero-velocity average={baseline['mpjpe_mm'].average:.2f}")


def cmd_predict(args, cfg):
    if not args.checkpoint or not args.input:
        raise UsageError("predict needs --checkpoint and --input")
    if not args.out:
        raise UsageError("predict needs --out (output sequence file)")
    ckpt = load_checkpoint(args.checkpoint)
    if args.horizon and HORIZONS[args.horizon] != ckpt.config.output_frames:
        raise ConfigError(f"checkpoint predicts {ckpt.config.output_frames} frames, "
                          f"--horizon {args.horizon} asks for {HORIZONS[args.horizon]}")
    seq = read_sequence(args.input)
    pred = predict_checkpoint(ckpt, seq)
    write_sequence(pred, args.out)
    print(f"wrote {len(pred)} predicted frames to {args.out}")


def inspect_report(model, empirical=False):
    """Text table of layers, shapes, parameter counts and receptive fields."""
    c = model.config
    lines = [f"layout: {model.layout}  kernel: {model.kernel}x{model.kernel}  "
             f"joints: {c.n_joints}  input: {list(model.input_shape())}",
             f"{'idx':>4} {'layer':<16} {'in':>4} {'out':>4} {'k':>3} {'params':>8} {'RF':>4}"
             + ("  empirical" if empirical else "")]
    enc = 0
    for layer in model.layers():
        n = model.params[f"{layer.name}.weight"].data.size + layer.out_channels
        rf, idx, emp = "", "", ""
        if layer.name.startswith("block"):
            enc += 1
            idx = str(enc)
            rf = str(model.receptive_field(enc))
            if empirical:
                centre = c.n_joints // 2
                got = empirical_receptive_field(model, enc, centre)
                want = [j for j in range(c.n_joints)
                        if abs(j - centre) <= (model.receptive_field(enc) - 1) // 2]
                emp = f"  {len(got)} {'ok' if got == want else 'MISMATCH'}"
        lines.append(f"{idx:>4} {layer.name:<16} {layer.in_channels:>4} "
                     f"{layer.out_channels:>4} {layer.kernel:>3} {n:>8} {rf:>4}{emp}")
    full = model.full_coverage_layer()
    lines.append(f"parameters: {model.count_parameters()}")
    if full is None:
        lines.append(f"receptive field never covers all {c.n_joints} joints")
    else:
        lines.append(f"full-body coverage (RF >= {c.n_joints}) from encoder layer {full} "
                     f"({model.encoder_layer_name(full)})")
    return "\n".join(lines)


def cmd_inspect(args, cfg):
    out = _out_dir(args, required=False)
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint).build_model()
    else:
        config, flags = model_config(cfg)
        model = TrajectoryNet(config, flags, seed=cfg["seed"])
    report = inspect_report(model, args.empirical)
    print(report)
    if out is not None:
        (out / "inspect.txt").write_text(report + "\n")
        _write_resolved(out, cfg)
    if args.empirical and "MISMATCH" in report:
        raise DataError("empirical receptive field disagrees with the analytic table")


def cmd_ablate(args, cfg):
    out = _out_dir(args)
    if not cfg["data.manifest"]:
        raise UsageError("ablate needs data.manifest (or --manifest)")
    base = section(cfg, "model")
    base.validate()
    train_pairs = _pairs(cfg["data.manifest"], "train", base.input_frames, base.output_frames)
    test_pairs = _pairs(cfg["data.manifest"], "test", base.input_frames, base.output_frames)
    names = _variant_list(cfg)
    _write_resolved(out, cfg)
    rows = ablation_sweep(train_pairs, test_pairs, base, names, section(cfg, "train"),
                          model_seed=cfg["seed"], preprocessing=section(cfg, "prep"))
    frame_cols = [f"F_{i}" for i in TABLE_FRAMES if i <= base.output_frames]
    for kind in ("mse_m", "mae_m"):
        (out / f"ablation_{kind}.csv").write_text(
            table_to_csv(sweep_table(rows, kind, frame_cols)))
    (out / "ablation_mpjpe_mm.csv").write_text(table_to_csv(sweep_table(rows, "mpjpe_mm")))
    doc = [{"variant": r.variant, "divergent": r.divergent, "error": r.error,
            "parameters": r.parameters,
            "reports": {k: v.to_dict() for k, v in r.reports.items()}} for r in rows]
    (out / "ablation.json").write_text(json.dumps(doc, indent=2) + "\n")
    failed = [r.variant for r in rows if r.divergent]
    for r in rows:
        if not r.divergent:
            print(f"{r.variant:<8} MAE avg {r.reports['mae_m'].average:.6f} m  "
                  f"MPJPE avg {r.reports['mpjpe_mm'].average:.2f} mm")
    if failed:
        log.warning("divergent cells: %s", ", ".join(failed))
        print(f"warning: divergent cells recorded: {', '.join(failed)}", file=sys.stderr)


COMMANDS = {"gen-synth": cmd_gen_synth, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "inspect": cmd_inspect, "ablate": cmd_ablate}


def build_parser():
    parser = argparse.ArgumentParser(prog="trajnet", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key-value experiment file")
        p.add_argument("--out", help="output directory (predict: output file)")
        p.add_argument("--seed", type=int)
        p.add_argument("--ablation", choices=list(VARIANTS))
        p.add_argument("--horizon", choices=sorted(HORIZONS))
        p.add_argument("--manifest", help="dataset manifest (overrides data.manifest)")
        if name == "train":
            p.add_argument("--resume", help="checkpoint to continue from")
        if name in ("eval", "predict", "inspect"):
            p.add_argument("--checkpoint")
        if name == "predict":
            p.add_argument("--input", help="observed sequence file")
        if name == "inspect":
            p.add_argument("--empirical", action="store_true",
                           help="also verify receptive fields by perturbation")
    return parser


def _error_line(kind, code, message):
    return json.dumps({"error": kind, "exit_code": code, "message": message})


def main(argv=None):
    level = os.environ.get("TRAJNET_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _load_cfg(args)
        COMMANDS[args.command](args, cfg)
    except TrajNetError as exc:
        print(_error_line(type(exc).__name__, exc.exit_code, str(exc)), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(_error_line("DataError", 3, str(exc)), file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Checkpoint files.

Layout (all integers little-endian)::

    b"TRJN" | u16 version | u32 header length | header (UTF-8 JSON, sorted keys)
    | float64 LE tensors in header["tensors"] order | SHA-256 of everything before

The header carries the model config, ablation flags, optimiser
hyper-parameters and step, epoch, loss histories, generator state,
preprocessing settings and the skeleton. Tensors are the parameters
followed by the Adam first and second moments when present.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..errors import ChecksumError, MagicError, ParseError, TruncationError, VersionError
from ..model import AblationFlags, ModelConfig
from ..skeleton import SkeletonSpec
from ..training import Checkpoint, Preprocessing
from .sequence_io import atomic_write

MAGIC = b"TRJN"
VERSION = 1
_PREAMBLE = struct.Struct("<4sHI")
_DIGEST = 32


def _skeleton_dict(spec):
    if spec is None:
        return None
    return {"name": spec.name, "joint_names": list(spec.joint_names),
            "limbs": [[limb, list(idx)] for limb, idx in spec.limbs],
            "dim": spec.dim, "units": spec.units}


def _skeleton_from(d):
    if d is None:
        return None
    return SkeletonSpec(d["name"], tuple(d["joint_names"]),
                        tuple((limb, tuple(idx)) for limb, idx in d["limbs"]),
                        d["dim"], d["units"])


def dumps_checkpoint(ckpt):
    names = list(ckpt.params)
    tensors = [("param", n, ckpt.params[n]) for n in names]
    has_moments = bool(ckpt.adam.m)
    if has_moments:
        tensors += [("m", n, ckpt.adam.m[n]) for n in names]
        tensors += [("v", n, ckpt.adam.v[n]) for n in names]
    header = {
        "model": ckpt.config.to_dict(),
        "ablations": ckpt.ablations.to_dict(),
        "adam": {"learning_rate": ckpt.adam.learning_rate, "beta1": ckpt.adam.beta1,
                 "beta2": ckpt.adam.beta2, "epsilon": ckpt.adam.epsilon,
                 "step": ckpt.adam.step},
        "epoch": ckpt.epoch,
        "history": [float(v) for v in ckpt.history],
        "eval_history": [[int(e), float(v)] for e, v in ckpt.eval_history],
        "rng_state": ckpt.rng_state,
        "preprocessing": asdict(ckpt.preprocessing),
        "skeleton": _skeleton_dict(ckpt.skeleton),
        "frame_interval_ms": float(ckpt.frame_interval_ms),
        "tensors": [[kind, n, list(a.shape)] for kind, n, a in tensors],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, _, a in tensors)
    blob = _PREAMBLE.pack(MAGIC, VERSION, len(head)) + head + body
    return blob + hashlib.sha256(blob).digest()


def loads_checkpoint(data: bytes):
    if len(data) < _PREAMBLE.size + _DIGEST:
        raise TruncationError("checkpoint shorter than its fixed framing", offset=len(data))
    magic, version, hlen = _PREAMBLE.unpack_from(data, 0)
    if magic != MAGIC:
        raise MagicError(f"not a checkpoint (magic {magic!r})", offset=0)
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}", offset=4)
    blob, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(blob).digest() != digest:
        raise ChecksumError("checkpoint checksum mismatch", offset=len(blob))
    start = _PREAMBLE.size
    try:
        h = json.loads(blob[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable checkpoint header: {exc}", offset=start) from None
    offset = start + hlen
    arrays = {"param": {}, "m": {}, "v": {}}
    for kind, name, shape in h["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise TruncationError(f"tensor {name!r} truncated", offset=offset)
        arrays[kind][name] = np.frombuffer(blob, "<f8", count, offset).astype(
            np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise ParseError("unexpected bytes after the last tensor", offset=offset)
    a = h["adam"]
    adam = T.AdamState(a["learning_rate"], a["beta1"], a["beta2"], a["epsilon"], a["step"],
                       arrays["m"], arrays["v"])
    return Checkpoint(
        config=ModelConfig.from_dict(h["model"]),
        ablations=AblationFlags.from_dict(h["ablations"]),
        params=arrays["param"],
        adam=adam,
        epoch=h["epoch"],
        history=list(h["history"]),
        eval_history=[(e, v) for e, v in h["eval_history"]],
        rng_state=h["rng_state"],
        preprocessing=Preprocessing(**h["preprocessing"]),
        skeleton=_skeleton_from(h["skeleton"]),
        frame_interval_ms=h["frame_interval_ms"],
    )


def save_checkpoint(ckpt, path):
    atomic_write(path, dumps_checkpoint(ckpt))


def load_checkpoint(path):
    return loads_checkpoint(Path(path).read_bytes())

"""Sequence files: a CSV-style text form and a little-endian binary form.

Text form::

    #TRJSEQ version=1 n_joints=22 dim=3 frames=35 units=millimeters frame_interval_ms=40.0 skeleton=h36m-22
    x00,y00,z00,x01,y01,z01,...      <- one line per frame, joint-major

Binary form::

    b"TRJS" | u16 version | u32 header length | header (UTF-8 JSON) | float64 LE [T, N_j, D]

Both headers carry the same fields. A skeleton that is not a named preset
is written inline as ``joints=a,b,...`` plus ``limbs=left_arm:5,...``
(joint counts in limb order). Sequences are always written in limb order.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from urllib.parse import quote, unquote

import numpy as np

from ..errors import DataError, ExtentError, ParseError, TruncationError, VersionError
from ..skeleton import PRESETS, MotionSequence, SkeletonSpec

FORMAT_VERSION = 1
TEXT_MAGIC = "#TRJSEQ"
BINARY_MAGIC = b"TRJS"
BINARY_SUFFIXES = {".trjs", ".bin"}


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def header_fields(seq):
    spec = seq.spec
    fields = {
        "version": FORMAT_VERSION,
        "n_joints": spec.n_joints,
        "dim": spec.dim,
        "frames": len(seq),
        "units": spec.units,
        "frame_interval_ms": float(seq.frame_interval_ms),
    }
    fields["skeleton"] = spec.name
    preset = PRESETS.get(spec.name)
    if preset is None or not preset.compatible(spec):
        fields["joints"] = list(spec.joint_names)
        fields["limbs"] = [[limb, len(idx)] for limb, idx in spec.limbs]
    if seq.label is not None:
        fields["label"] = seq.label
    return fields


def spec_from_header(h, where):
    units = h["units"]
    name = h.get("skeleton", "inline")
    if "joints" in h:
        names, limbs, i = tuple(h["joints"]), [], 0
        for limb, count in h["limbs"]:
            limbs.append((limb, tuple(range(i, i + int(count)))))
            i += int(count)
        try:
            spec = SkeletonSpec(name, names, tuple(limbs), int(h["dim"]), units)
        except (DataError, ValueError) as exc:
            raise ParseError(f"bad inline skeleton: {exc}", **where) from None
    else:
        if name not in PRESETS:
            raise ParseError(f"unknown skeleton preset {name!r}", **where)
        spec = PRESETS[name].with_units(units)
    if spec.n_joints != int(h["n_joints"]) or spec.dim != int(h["dim"]):
        raise ExtentError(f"header declares {h['n_joints']}x{h['dim']} but skeleton "
                          f"{name!r} is {spec.n_joints}x{spec.dim}", **where)
    return spec


# --- text ----------------------------------------------------------------

def _format_text_header(fields):
    parts = [TEXT_MAGIC]
    for key, value in fields.items():
        if key == "joints":
            value = ",".join(quote(v, safe="") for v in value)
        elif key == "limbs":
            value = ",".join(f"{quote(limb, safe='')}:{n}" for limb, n in value)
        elif key == "label":
            value = quote(value, safe="")
        elif isinstance(value, float):
            value = repr(value)
        parts.append(f"{key}={value}")
    return " ".join(parts)


def _parse_text_header(line):
    tokens = line.split()
    if not tokens or tokens[0] != TEXT_MAGIC:
        raise ParseError(f"missing {TEXT_MAGIC} header", line=1)
    h = {}
    for tok in tokens[1:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(f"malformed header field {tok!r}", line=1)
        h[key] = value
    missing = {"version", "n_joints", "dim", "frames", "units", "frame_interval_ms"} - set(h)
    if missing:
        raise ParseError(f"header is missing {sorted(missing)}", line=1)
    try:
        version = int(h["version"])
    except ValueError:
        raise ParseError(f"bad version {h['version']!r}", line=1) from None
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported sequence format version {version}", line=1)
    if "joints" in h:
        h["joints"] = [unquote(v) for v in h["joints"].split(",")]
        h["limbs"] = [(unquote(a), int(b)) for a, b in
                      (item.rsplit(":", 1) for item in h["limbs"].split(","))]
    if "label" in h:
        h["label"] = unquote(h["label"])
    try:
        for key in ("n_joints", "dim", "frames"):
            h[key] = int(h[key])
        h["frame_interval_ms"] = float(h["frame_interval_ms"])
    except ValueError as exc:
        raise ParseError(f"bad numeric header field: {exc}", line=1) from None
    return h


def dumps_text(seq):
    seq = seq.to_limb_order()
    lines = [_format_text_header(header_fields(seq))]
    for frame in seq.frames:
        lines.append(",".join(repr(float(v)) for v in frame.ravel()))
    return "\n".join(lines) + "\n"


def loads_text(text):
    lines = text.splitlines()
    if not lines:
        raise TruncationError("empty sequence file", line=1)
    h = _parse_text_header(lines[0])
    spec = spec_from_header(h, {"line": 1})
    n, width = h["frames"], spec.n_joints * spec.dim
    records = [ln for ln in lines[1:]]
    while records and not records[-1].strip():
        records.pop()
    frames = np.empty((n, spec.n_joints, spec.dim))
    for i in range(n):
        if i >= len(records):
            raise TruncationError(f"file ends before record {i + 1} of {n}", line=i + 2)
        parts = records[i].split(",")
        if len(parts) != width:
            raise ExtentError(f"record {i + 1} has {len(parts)} values, expected {width}",
                              line=i + 2)
        try:
            row = np.array([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"record {i + 1}: {exc}", line=i + 2) from None
        if not np.all(np.isfinite(row)):
            raise ParseError(f"record {i + 1} has non-finite values", line=i + 2)
        frames[i] = row.reshape(spec.n_joints, spec.dim)
    if len(records) > n:
        raise ExtentError(f"{len(records) - n} records beyond the declared {n}", line=n + 2)
    return MotionSequence(spec, frames, h["frame_interval_ms"], h.get("label"))


# --- binary --------------------------------------------------------------

_PREAMBLE = struct.Struct("<4sHI")


def dumps_binary(seq):
    seq = seq.to_limb_order()
    header = json.dumps(header_fields(seq), sort_keys=True, separators=(",", ":")).encode()
    payload = np.ascontiguousarray(seq.frames, dtype="<f8").tobytes()
    return _PREAMBLE.pack(BINARY_MAGIC, FORMAT_VERSION, len(header)) + header + payload


def loads_binary(data: bytes):
    if len(data) < _PREAMBLE.size:
        raise TruncationError("file shorter than the binary preamble", offset=len(data))
    magic, version, hlen = _PREAMBLE.unpack_from(data, 0)
    if magic != BINARY_MAGIC:
        raise ParseError(f"bad magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported sequence format version {version}", offset=4)
    start = _PREAMBLE.size
    if len(data) < start + hlen:
        raise TruncationError("header truncated", offset=len(data))
    try:
        h = json.loads(data[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable header: {exc}", offset=start) from None
    spec = spec_from_header(h, {"offset": start})
    n = int(h["frames"])
    body = start + hlen
    record = spec.n_joints * spec.dim * 8
    expected = body + n * record
    if len(data) < expected:
        got = (len(data) - body) // record
        raise TruncationError(f"payload ends in record {got + 1} of {n}",
                              offset=body + got * record)
    if len(data) > expected:
        raise ExtentError(f"{len(data) - expected} bytes beyond the declared {n} records",
                          offset=expected)
    frames = np.frombuffer(data, dtype="<f8", count=n * spec.n_joints * spec.dim, offset=body)
    if not np.all(np.isfinite(frames)):
        raise ParseError("payload has non-finite values", offset=body)
    frames = frames.astype(np.float64).reshape(n, spec.n_joints, spec.dim)
    return MotionSequence(spec, frames, float(h["frame_interval_ms"]), h.get("label"))


# --- files ---------------------------------------------------------------

def write_sequence(seq, path, binary=None):
    """Write ``seq``; the binary form is chosen by suffix (.trjs/.bin) unless forced."""
    path = Path(path)
    if binary is None:
        binary = path.suffix in BINARY_SUFFIXES
    data = dumps_binary(seq) if binary else dumps_text(seq).encode()
    atomic_write(path, data)


def read_sequence(path):
    """Read either form; the format is sniffed from the leading bytes."""
    data = Path(path).read_bytes()
    if data.startswith(BINARY_MAGIC):
        return loads_binary(data)
    try:
        text = data.decode()
    except UnicodeDecodeError:
        raise ParseError("neither a binary nor a text sequence file", offset=0) from None
    return loads_text(text)

"""Dataset manifests and sliding-window pair extraction.

A manifest is a line-oriented text file::

    # comments start with '#'
    input_frames=10
    output_frames=10
    stride=5
    skeleton=h36m-22
    seqs/walk_01.csv,train,walking
    seqs/walk_02.trjs,test,walking,3

Setting lines are ``key=value``; entry lines are
``path,split,label[,offset]`` where ``offset`` is the first frame at which
windows may start (default 0). Relative paths resolve against the
manifest's directory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError, DataError, ParseError, UsageError
from ..skeleton import MotionSequence
from .sequence_io import atomic_write, read_sequence

log = logging.getLogger(__name__)

SPLITS = ("train", "test")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    split: str
    label: str
    offset: int = 0


@dataclass
class DatasetManifest:
    entries: list
    input_frames: int = 10
    output_frames: int = 10
    stride: int = 1
    skeleton: str | None = None
    root: Path = field(default_factory=Path)

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def select(self, split=None):
        return [e for e in self.entries if split is None or e.split == split]


@dataclass(frozen=True, eq=False)
class WindowPair:
    input: MotionSequence
    target: MotionSequence
    label: str | None = None
    source: str | None = None
    start: int = 0

    def __iter__(self):
        return iter((self.input, self.target))


_INT_KEYS = ("input_frames", "output_frames", "stride")


def parse_manifest(text, root=Path(".")):
    settings, entries = {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line and "," not in line:
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key in _INT_KEYS:
                try:
                    settings[key] = int(value)
                except ValueError:
                    raise ParseError(f"{key} must be an integer", line=lineno) from None
                if settings[key] < 1:
                    raise ParseError(f"{key} must be positive", line=lineno)
            elif key == "skeleton":
                settings[key] = value
            else:
                raise ParseError(f"unknown manifest setting {key!r}", line=lineno)
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4):
            raise ParseError("entry must be path,split,label[,offset]", line=lineno)
        if parts[1] not in SPLITS:
            raise ParseError(f"split must be one of {SPLITS}, got {parts[1]!r}", line=lineno)
        offset = 0
        if len(parts) == 4:
            try:
                offset = int(parts[3])
            except ValueError:
                raise ParseError("offset must be an integer", line=lineno) from None
            if offset < 0:
                raise ParseError("offset must be non-negative", line=lineno)
        entries.append(ManifestEntry(parts[0], parts[1], parts[2], offset))
    return DatasetManifest(entries, root=Path(root), **settings)


def load_manifest(path, check=True):
    """Read a manifest; with ``check`` every file must exist and match its skeleton."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    manifest = parse_manifest(text, path.parent)
    if check:
        for entry in manifest.entries:
            f = manifest.resolve(entry)
            if not f.exists():
                raise DataError(f"manifest entry {entry.path!r} does not exist")
            if manifest.skeleton is not None:
                seq = read_sequence(f)
                if seq.spec.name != manifest.skeleton:
                    raise DataError(f"{entry.path!r} uses skeleton {seq.spec.name!r}, manifest "
                                    f"declares {manifest.skeleton!r}")
    return manifest


def dumps_manifest(manifest):
    lines = ["# trajnet dataset manifest",
             f"input_frames={manifest.input_frames}",
             f"output_frames={manifest.output_frames}",
             f"stride={manifest.stride}"]
    if manifest.skeleton:
        lines.append(f"skeleton={manifest.skeleton}")
    for e in manifest.entries:
        row = [e.path, e.split, e.label] + ([str(e.offset)] if e.offset else [])
        if any("," in v for v in row):
            raise ConfigError(f"manifest fields may not contain commas: {row}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_manifest(manifest, path):
    atomic_write(path, dumps_manifest(manifest).encode())


def window_sequence(seq, input_frames, output_frames, stride, offset=0, label=None,
                    source=None):
    """Sliding (input, target) windows over one sequence."""
    if stride < 1:
        raise ConfigError("stride must be positive")
    span = input_frames + output_frames
    pairs = []
    for t in range(offset, len(seq) - span + 1, stride):
        pairs.append(WindowPair(seq.slice(t, t + input_frames),
                                seq.slice(t + input_frames, t + span),
                                label, source, t))
    return pairs


def window_dataset(manifest, split=None, sequences=None):
    """All windows of the manifest's entries (optionally one split).

    ``sequences`` may map entry paths to already loaded sequences. Entries
    too short for one window are skipped and counted in the log.
    """
    pairs, skipped = [], 0
    for entry in manifest.select(split):
        seq = sequences[entry.path] if sequences else read_sequence(manifest.resolve(entry))
        if manifest.skeleton is not None and seq.spec.name != manifest.skeleton:
            raise DataError(f"{entry.path!r} uses skeleton {seq.spec.name!r}, manifest "
                            f"declares {manifest.skeleton!r}")
        found = window_sequence(seq, manifest.input_frames, manifest.output_frames,
                                manifest.stride, entry.offset, entry.label, entry.path)
        if not found:
            skipped += 1
        pairs.extend(found)
    if skipped:
        log.warning("skipped %d sequence(s) shorter than %d frames", skipped,
                    manifest.input_frames + manifest.output_frames)
    if not pairs:
        raise UsageError("the manifest produced no (input, target) windows")
    return pairs

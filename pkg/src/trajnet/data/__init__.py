"""Serialisation, manifests, windowing and synthetic data."""

from .checkpoint_io import dumps_checkpoint, load_checkpoint, loads_checkpoint, save_checkpoint
from .manifest import (DatasetManifest, ManifestEntry, WindowPair, load_manifest,
                       parse_manifest, window_dataset, window_sequence, write_manifest)
from .sequence_io import (dumps_binary, dumps_text, loads_binary, loads_text, read_sequence,
                          write_sequence)
from .synthetic import SynthConfig, generate_synthetic

__all__ = [
    "DatasetManifest", "ManifestEntry", "SynthConfig", "WindowPair", "dumps_binary",
    "dumps_checkpoint", "dumps_text", "generate_synthetic", "load_checkpoint", "load_manifest",
    "loads_binary", "loads_checkpoint", "loads_text", "parse_manifest", "read_sequence",
    "save_checkpoint", "window_dataset", "window_sequence", "write_manifest", "write_sequence",
]

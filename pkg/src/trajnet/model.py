"""TrajectoryNet: trajectory-space transform, trajectory-block encoder, decoder.

Default layout puts frames on channels, coordinates on height and joints
on width, so every filter sees the whole observed window of each joint
it covers. The coords-as-channels ablation instead lays frames along the
width (observed frames followed by copies of the last one) with joints on
height and coordinates on channels.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, InputLengthError, UsageError
from .skeleton import from_output_tensor, to_input_tensor


@dataclass
class ModelConfig:
    n_joints: int = 22
    dim: int = 3
    input_frames: int = 10
    output_frames: int = 10
    hidden_channels: int = 64
    n_blocks: int = 4
    layers_per_block: int = 5
    spatial_kernel: int = 3
    leaky_slope: float = 0.1
    dropout_rate: float = 0.1
    global_residual: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("n_joints", "dim", "input_frames", "output_frames", "hidden_channels",
                     "n_blocks", "layers_per_block", "spatial_kernel"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.spatial_kernel % 2 == 0:
            raise ConfigError(f"spatial_kernel must be odd, got {self.spatial_kernel}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class AblationFlags:
    remove_spatial: bool = False
    coords_as_channels: bool = False
    remove_residuals: bool = False

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ablation keys: {sorted(unknown)}")
        return cls(**d)


# Named cells of the ablation study: flags plus config overrides.
VARIANTS = {
    "WS": (AblationFlags(), {}),
    "RS": (AblationFlags(remove_spatial=True), {}),
    "WGCOT-1": (AblationFlags(), {"n_blocks": 1}),
    "RGCOT-1": (AblationFlags(coords_as_channels=True), {"n_blocks": 1}),
    "WGCOT-4": (AblationFlags(), {"n_blocks": 4}),
    "RGCOT-4": (AblationFlags(coords_as_channels=True), {"n_blocks": 4}),
    "WSRC": (AblationFlags(), {}),
    "RSRC": (AblationFlags(remove_residuals=True), {}),
}


def variant(name, base_config):
    """Resolve a named ablation cell against ``base_config``."""
    try:
        flags, overrides = VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown ablation {name!r}; known: {list(VARIANTS)}") from None
    return replace(base_config, **overrides), flags


@dataclass(frozen=True)
class LayerSpec:
    name: str
    in_channels: int
    out_channels: int
    kernel: int
    activation: bool  # followed by leaky rectifier + dropout


class TrajectoryNet:
    """The network plus its parameters (a name -> leaf ``Tensor`` dict)."""

    def __init__(self, config=None, ablations=None, seed=0):
        self.config = config or ModelConfig()
        self.config.validate()
        self.ablations = ablations or AblationFlags()
        rng = np.random.default_rng(seed)
        self.params = {}
        for layer in self.layers():
            shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            self.params[f"{layer.name}.weight"] = T.Tensor(
                T.glorot_uniform(shape, rng), requires_grad=True, name=f"{layer.name}.weight")
            self.params[f"{layer.name}.bias"] = T.Tensor(
                np.zeros(layer.out_channels), requires_grad=True, name=f"{layer.name}.bias")

    # --- layer plan --------------------------------------------------------

    @property
    def kernel(self):
        return 1 if self.ablations.remove_spatial else self.config.spatial_kernel

    @property
    def layout(self):
        return "coords_as_channels" if self.ablations.coords_as_channels else "time_as_channels"

    @property
    def input_width(self):
        """Frame extent of the coords-as-channels input (observed + aligned future)."""
        return self.config.input_frames + self.config.output_frames

    def input_shape(self):
        c = self.config
        if self.ablations.coords_as_channels:
            return (c.dim, c.n_joints, self.input_width)
        return (c.input_frames, c.dim, c.n_joints)

    def layers(self):
        c, k = self.config, self.kernel
        first_in = c.dim if self.ablations.coords_as_channels else c.input_frames
        plan = [LayerSpec("transform", first_in, c.hidden_channels, 1, True)]
        for b in range(1, c.n_blocks + 1):
            for i in range(1, c.layers_per_block + 1):
                plan.append(LayerSpec(f"block{b}.conv{i}", c.hidden_channels,
                                      c.hidden_channels, k, True))
        plan.append(LayerSpec("decoder.conv1", c.hidden_channels, c.output_frames, k, True))
        last_out = c.dim if self.ablations.coords_as_channels else c.output_frames
        plan.append(LayerSpec("decoder.conv2", c.output_frames, last_out, 1, False))
        return plan

    def skip_pairs(self):
        """(source stage, destination stage) pairs of one trajectory block."""
        if self.ablations.remove_residuals:
            return []
        n = self.config.layers_per_block
        return [(i, n + 1 - i) for i in range(1, n // 2 + 1)]

    # --- forward pieces -----------------------------------------------------

    def _conv(self, name, x, training, rng, activation=True):
        out = T.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])
        if activation:
            out = T.leaky_relu(out, self.config.leaky_slope)
            out = T.dropout(out, self.config.dropout_rate, training, rng)
        return out

    def trajectory_transform(self, x, training=False, rng=None, trace=None):
        x = _as_tensor(x)
        expected = self.input_shape()
        if x.shape[-3:] != expected:
            raise DimensionError(f"input must have shape {expected} (plus optional batch "
                                 f"axis), got {x.shape}")
        out = self._conv("transform", x, training, rng)
        if trace is not None:
            trace.append(("transform", out))
        return out

    def trajectory_block(self, x, block, training=False, rng=None, trace=None):
        x = _as_tensor(x)
        c = self.config
        if x.shape[-3] != c.hidden_channels:
            raise DimensionError(f"block input needs {c.hidden_channels} channels, "
                                 f"got {x.shape[-3]}")
        skip_from = {dst: src for src, dst in self.skip_pairs()}
        stage_inputs = {}
        h = x
        for stage in range(1, c.layers_per_block + 1):
            if stage in skip_from:
                h = T.add(h, stage_inputs[skip_from[stage]])
            stage_inputs[stage] = h
            h = self._conv(f"block{block}.conv{stage}", h, training, rng)
            if trace is not None:
                trace.append((f"block{block}.conv{stage}", h))
        return h

    def encode(self, x, training=False, rng=None, trace=None):
        h = _as_tensor(x)
        for b in range(1, self.config.n_blocks + 1):
            h = self.trajectory_block(h, b, training, rng, trace)
        return h

    def decode(self, latent, last_observed, training=False, rng=None, trace=None):
        """Decode to [.., N_to, D, N_j]; ``last_observed`` is [.., D, N_j] or None.

        With ``global_residual`` on, the last observed pose is added to
        every predicted frame.
        """
        c = self.config
        latent = _as_tensor(latent)
        if latent.shape[-3] != c.hidden_channels:
            raise DimensionError(f"latent needs {c.hidden_channels} channels, "
                                 f"got {latent.shape[-3]}")
        h = self._conv("decoder.conv1", latent, training, rng)
        if trace is not None:
            trace.append(("decoder.conv1", h))
        out = self._conv("decoder.conv2", h, training, rng, activation=False)
        if trace is not None:
            trace.append(("decoder.conv2", out))
        if self.ablations.coords_as_channels:
            # [.., D, N_j, W] -> keep the aligned future columns -> [.., N_to, D, N_j]
            out = out[..., c.input_frames:]
            axes = (2, 0, 1) if out.ndim == 3 else (0, 3, 1, 2)
            out = T.transpose(out, axes)
        if c.global_residual:
            if last_observed is None:
                raise UsageError("global_residual needs the last observed pose")
            last = np.asarray(last_observed, dtype=np.float64)
            base = np.broadcast_to(np.expand_dims(last, -3), out.shape)
            out = T.add(out, T.Tensor(base))
        return out

    def last_observed(self, x):
        """Last observed pose [.., D, N_j] from a prepared input array."""
        x = np.asarray(x.data if isinstance(x, T.Tensor) else x)
        if self.ablations.coords_as_channels:
            return x[..., :, :, self.config.input_frames - 1]
        return x[..., -1, :, :]

    def forward_tensor(self, x, training=False, rng=None, trace=None):
        """Prepared input [.., C_in, H, W] -> prediction [.., N_to, D, N_j]."""
        x = _as_tensor(x)
        h = self.trajectory_transform(x, training, rng, trace)
        h = self.encode(h, training, rng, trace)
        return self.decode(h, self.last_observed(x), training, rng, trace)

    __call__ = forward_tensor

    def prepare_input(self, seq):
        """MotionSequence of ``input_frames`` poses -> input array for this layout."""
        c = self.config
        if len(seq) != c.input_frames:
            raise InputLengthError(f"expected {c.input_frames} input frames, got {len(seq)}")
        if seq.spec.n_joints != c.n_joints or seq.spec.dim != c.dim:
            raise DimensionError(f"sequence skeleton {seq.spec.n_joints}x{seq.spec.dim} does "
                                 f"not match model {c.n_joints}x{c.dim}")
        if self.ablations.coords_as_channels:
            x = to_input_tensor(seq, c.input_frames, "coords_as_channels")
            tail = np.repeat(x[:, :, -1:], c.output_frames, axis=2)
            return np.concatenate([x, tail], axis=2)
        return to_input_tensor(seq, c.input_frames, "time_as_channels")

    def forward(self, seq):
        """Evaluation-mode prediction of ``output_frames`` future poses."""
        x = self.prepare_input(seq)
        out = self.forward_tensor(x[None])
        return from_output_tensor(out.data[0], seq.spec.limb_ordered(), seq.frame_interval_ms,
                                  label=seq.label)

    # --- analysis -----------------------------------------------------------

    def n_encoder_layers(self):
        return self.config.n_blocks * self.config.layers_per_block

    def receptive_field(self, layer_index):
        """Joint-axis receptive field of encoder layer ``layer_index`` (1-based)."""
        n = self.n_encoder_layers()
        if not 1 <= layer_index <= n:
            raise UsageError(f"encoder layer index must lie in 1..{n}, got {layer_index}")
        return 1 + layer_index * (self.kernel - 1)

    def full_coverage_layer(self):
        """First encoder layer whose receptive field spans all joints, or None."""
        for i in range(1, self.n_encoder_layers() + 1):
            if self.receptive_field(i) >= self.config.n_joints:
                return i
        return None

    def encoder_layer_name(self, layer_index):
        self.receptive_field(layer_index)
        per = self.config.layers_per_block
        return f"block{(layer_index - 1) // per + 1}.conv{(layer_index - 1) % per + 1}"

    def count_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))

    def zero_decoder(self):
        for name, p in self.params.items():
            if name.startswith("decoder."):
                p.data[...] = 0.0

    # --- state --------------------------------------------------------------

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state):
        if set(state) != set(self.params):
            missing = sorted(set(self.params) - set(state))
            extra = sorted(set(state) - set(self.params))
            raise DimensionError(f"parameter names differ (missing {missing}, extra {extra})")
        for k, arr in state.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self.params[k].shape:
                raise DimensionError(f"parameter {k!r}: expected shape "
                                     f"{self.params[k].shape}, got {arr.shape}")
            self.params[k].data[...] = arr

    def clone(self):
        return copy.deepcopy(self)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def _as_tensor(x):
    return x if isinstance(x, T.Tensor) else T.Tensor(x)


def empirical_receptive_field(model, layer_index, joint, seed=0, delta=1.0):
    """Joint columns of encoder layer ``layer_index`` that react to a delta at ``joint``.

    Runs the model in evaluation mode on a random input and on the same
    input with every coordinate of ``joint`` shifted by ``delta``.
    """
    name = model.encoder_layer_name(layer_index)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=model.input_shape())
    bumped = x.copy()
    if model.ablations.coords_as_channels:
        bumped[:, joint, :] += delta
        joint_axis = -2
    else:
        bumped[:, :, joint] += delta
        joint_axis = -1
    outs = []
    for inp in (x, bumped):
        trace = []
        model.forward_tensor(inp, trace=trace)
        outs.append(dict(trace)[name].data)
    changed = np.moveaxis(outs[0] != outs[1], joint_axis, 0)
    return sorted(int(j) for j in np.flatnonzero(changed.reshape(changed.shape[0], -1).any(axis=1)))

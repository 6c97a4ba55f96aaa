"""Poses, motion sequences and the limb-ordered joint layout.

Joint order matters: the network's spatial filters slide along the joint
axis, so joints of one limb must sit next to each other. Presets list
joints limb by limb (left arm, right arm, trunk, left leg, right leg),
torso outward within each limb.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DataError, DimensionError, InputLengthError, UnitError

UNITS = ("millimeters", "meters")
_TO_MM = {"millimeters": 1.0, "meters": 1000.0}
LIMB_NAMES = ("left_arm", "right_arm", "trunk", "left_leg", "right_leg")
LAYOUTS = ("time_as_channels", "coords_as_channels")


@dataclass(frozen=True)
class SkeletonSpec:
    """Joint count, per-joint dimension and the limb partition.

    ``limbs`` maps each limb name to the *source* indices of its joints;
    ``limb_order`` is their concatenation and must be a permutation.
    """

    name: str
    joint_names: tuple
    limbs: tuple  # ((limb_name, (source_index, ...)), ...)
    dim: int = 3
    units: str = "millimeters"

    def __post_init__(self):
        if self.units not in UNITS:
            raise UnitError(f"unknown units {self.units!r}; expected one of {UNITS}")
        if self.dim < 1:
            raise DimensionError(f"dim must be positive, got {self.dim}")
        order = self.limb_order
        if sorted(order) != list(range(self.n_joints)):
            raise DataError(f"limb partition of {self.name!r} is not a permutation "
                            f"of 0..{self.n_joints - 1}")

    @property
    def n_joints(self):
        return len(self.joint_names)

    @property
    def limb_order(self):
        return tuple(i for _, idx in self.limbs for i in idx)

    def limb_slices(self):
        """Contiguous [start, stop) position ranges of each limb after permutation."""
        out, start = {}, 0
        for limb, idx in self.limbs:
            out[limb] = (start, start + len(idx))
            start += len(idx)
        return out

    def is_limb_ordered(self):
        return self.limb_order == tuple(range(self.n_joints))

    def limb_ordered(self):
        """The same skeleton with joints renumbered into limb order."""
        order = self.limb_order
        names = tuple(self.joint_names[i] for i in order)
        limbs, start = [], 0
        for limb, idx in self.limbs:
            limbs.append((limb, tuple(range(start, start + len(idx)))))
            start += len(idx)
        return replace(self, joint_names=names, limbs=tuple(limbs))

    def with_units(self, units):
        return replace(self, units=units)

    def compatible(self, other):
        return (self.joint_names == other.joint_names and self.dim == other.dim
                and self.limbs == other.limbs)


@dataclass(frozen=True)
class Pose:
    joints: np.ndarray  # [N_j, D]

    def __post_init__(self):
        arr = np.array(self.joints, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionError(f"pose must be an N_j x D matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DataError("pose contains non-finite coordinates")
        arr.flags.writeable = False
        object.__setattr__(self, "joints", arr)

    def __eq__(self, other):
        return isinstance(other, Pose) and np.array_equal(self.joints, other.joints)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """An ordered list of poses on one skeleton.

    Coordinates are held as one read-only [T, N_j, D] array.
    """

    spec: SkeletonSpec
    frames: np.ndarray
    frame_interval_ms: float = 40.0
    label: str | None = field(default=None, compare=False)

    def __post_init__(self):
        arr = np.array(self.frames, dtype=np.float64)
        if arr.ndim != 3:
            raise DimensionError(f"sequence frames must be [T, N_j, D], got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise DataError("a motion sequence needs at least one pose")
        if arr.shape[1:] != (self.spec.n_joints, self.spec.dim):
            raise DimensionError(
                f"frames have {arr.shape[1]} joints x {arr.shape[2]} dims, skeleton "
                f"{self.spec.name!r} has {self.spec.n_joints} x {self.spec.dim}")
        if not np.all(np.isfinite(arr)):
            raise DataError("sequence contains non-finite coordinates")
        if not self.frame_interval_ms > 0:
            raise DataError(f"frame interval must be positive, got {self.frame_interval_ms}")
        arr.flags.writeable = False
        object.__setattr__(self, "frames", arr)

    @classmethod
    def from_poses(cls, spec, poses: Sequence[Pose], frame_interval_ms=40.0, label=None):
        return cls(spec, np.stack([p.joints for p in poses]), frame_interval_ms, label)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def poses(self):
        return [Pose(f) for f in self.frames]

    @property
    def units(self):
        return self.spec.units

    def __eq__(self, other):
        return (isinstance(other, MotionSequence) and self.spec == other.spec
                and self.frame_interval_ms == other.frame_interval_ms
                and np.array_equal(self.frames, other.frames))

    __hash__ = None

    def slice(self, start, stop):
        return replace(self, frames=self.frames[start:stop])

    def to_units(self, units):
        if units == self.units:
            return self
        if units not in UNITS:
            raise UnitError(f"unknown units {units!r}")
        return replace(self, spec=self.spec.with_units(units),
                       frames=convert_units(self.frames, self.units, units))

    def to_limb_order(self):
        if self.spec.is_limb_ordered():
            return self
        order = list(self.spec.limb_order)
        return replace(self, spec=self.spec.limb_ordered(), frames=self.frames[:, order, :])


def unit_factor(src, dst):
    """Multiplier converting coordinates from ``src`` to ``dst`` units."""
    for u in (src, dst):
        if u not in UNITS:
            raise UnitError(f"unknown units {u!r}")
    return _TO_MM[src] / _TO_MM[dst]


def convert_units(values, src, dst):
    """Exact mm <-> m conversion: multiply or divide by 1000, never by 0.001."""
    factor = unit_factor(src, dst)
    if factor >= 1.0:
        return np.asarray(values) * factor
    return np.asarray(values) / unit_factor(dst, src)


def to_input_tensor(seq, n_frames=None, layout="time_as_channels"):
    """[N_ti, D, N_j] (time as channels) or [D, N_j, N_ti] (coords as channels)."""
    if layout not in LAYOUTS:
        raise DimensionError(f"unknown layout {layout!r}")
    if n_frames is not None and len(seq) != n_frames:
        raise InputLengthError(f"expected {n_frames} input frames, got {len(seq)}")
    seq = seq.to_limb_order()
    if layout == "time_as_channels":
        return np.ascontiguousarray(seq.frames.transpose(0, 2, 1))
    return np.ascontiguousarray(seq.frames.transpose(2, 1, 0))


def from_output_tensor(t, spec, frame_interval_ms=40.0, layout="time_as_channels", label=None):
    t = np.asarray(t, dtype=np.float64)
    if layout not in LAYOUTS:
        raise DimensionError(f"unknown layout {layout!r}")
    if t.ndim != 3:
        raise DimensionError(f"output tensor must be 3D, got shape {t.shape}")
    if layout == "time_as_channels":
        frames = t.transpose(0, 2, 1)
    else:
        frames = t.transpose(2, 1, 0)
    if frames.shape[1:] != (spec.n_joints, spec.dim):
        raise DimensionError(
            f"tensor extents {t.shape} do not match skeleton {spec.name!r} "
            f"({spec.n_joints} joints x {spec.dim} dims)")
    return MotionSequence(spec, frames, frame_interval_ms, label)


def repeat_last_frame(seq, count):
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    if count == 0:
        return seq
    tail = np.repeat(seq.frames[-1:], count, axis=0)
    return replace(seq, frames=np.concatenate([seq.frames, tail]))


def root_center(seq, root_joint, reference_frame=-1):
    """Subtract the root joint position at ``reference_frame`` from every frame.

    Returns the centred sequence and the [D] offset that undoes it.
    """
    offset = seq.frames[reference_frame, root_joint].copy()
    return replace(seq, frames=seq.frames - offset), offset


# --- presets -------------------------------------------------------------

def _preset(name, limbs, units):
    names, groups, i = [], [], 0
    for limb, joints in limbs:
        names.extend(joints)
        groups.append((limb, tuple(range(i, i + len(joints)))))
        i += len(joints)
    return SkeletonSpec(name, tuple(names), tuple(groups), 3, units)


# 22 of the 32 H3.6M joints; static and duplicated joints dropped. The choice
# of the 22 is our enumeration (the usual one in the prediction literature).
H36M_22 = _preset("h36m-22", [
    ("left_arm", ["l_shoulder", "l_elbow", "l_wrist", "l_thumb", "l_hand_tip"]),
    ("right_arm", ["r_shoulder", "r_elbow", "r_wrist", "r_thumb", "r_hand_tip"]),
    ("trunk", ["spine", "thorax", "neck", "head"]),
    ("left_leg", ["l_knee", "l_ankle", "l_foot", "l_toe"]),
    ("right_leg", ["r_knee", "r_ankle", "r_foot", "r_toe"]),
], "millimeters")

# Kinect-style 18-joint layout used for G3D / FNTU style data (meters).
KINECT_18 = _preset("kinect-18", [
    ("left_arm", ["l_shoulder", "l_elbow", "l_wrist", "l_hand"]),
    ("right_arm", ["r_shoulder", "r_elbow", "r_wrist", "r_hand"]),
    ("trunk", ["hip_center", "spine", "shoulder_center", "head"]),
    ("left_leg", ["l_hip", "l_knee", "l_ankle"]),
    ("right_leg", ["r_hip", "r_knee", "r_ankle"]),
], "meters")

PRESETS = {s.name: s for s in (H36M_22, KINECT_18)}
# Index (in limb order) of the joint used for optional root-centring.
ROOT_JOINT = {"h36m-22": 10, "kinect-18": 8}


def get_preset(name, units=None):
    try:
        spec = PRESETS[name]
    except KeyError:
        raise DataError(f"unknown skeleton preset {name!r}; known: {sorted(PRESETS)}") from None
    return spec.with_units(units) if units else spec


def generic_skeleton(n_joints, dim=3, units="millimeters"):
    """Split ``n_joints`` into five near-equal contiguous limbs."""
    if n_joints < 1:
        raise DimensionError("n_joints must be positive")
    sizes = [n_joints // 5 + (1 if k < n_joints % 5 else 0) for k in range(5)]
    limbs, names, i = [], [], 0
    for limb, size in zip(LIMB_NAMES, sizes):
        if size == 0:
            continue
        limbs.append((limb, tuple(range(i, i + size))))
        names.extend(f"{limb}_{k}" for k in range(size))
        i += size
    return SkeletonSpec(f"generic-{n_joints}", tuple(names), tuple(limbs), dim, units)


def skeleton_for(n_joints, dim=3, units="millimeters"):
    for spec in PRESETS.values():
        if spec.n_joints == n_joints and spec.dim == dim:
            return spec.with_units(units)
    return generic_skeleton(n_joints, dim, units)

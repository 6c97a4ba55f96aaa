"""Hooks for turning exported mocap arrays into sequence files.

Nothing here downloads or parses the original dataset archives. Export the
3D joint positions yourself (e.g. to ``.npy`` of shape [T, J_src, 3]) and
map them with :func:`from_array`. The index tables below are our
conventions, not official dataset definitions:

* ``H36M_32_TO_22``: source indices of the 32-joint H3.6M skeleton kept in
  the ``h36m-22`` preset, listed in preset (limb) order. Root, hips and the
  duplicated hand/spine joints are dropped. Coordinates are millimetres;
  sample at 25 fps (every second frame of the 50 fps capture) for the
  usual 40 ms frame interval.
* ``KINECT_25_TO_18``: NTU RGB+D / Kinect v2 25-joint indices kept in the
  ``kinect-18`` preset (hand tips, thumbs and feet dropped). G3D exports
  from Kinect v1 (20 joints) use ``KINECT_20_TO_18``. Coordinates are
  metres.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..skeleton import MotionSequence, get_preset

H36M_32_TO_22 = (
    17, 18, 19, 21, 22,   # left arm
    25, 26, 27, 29, 30,   # right arm
    12, 13, 14, 15,       # trunk
    7, 8, 9, 10,          # left leg
    2, 3, 4, 5,           # right leg
)

KINECT_25_TO_18 = (
    4, 5, 6, 7,           # left arm
    8, 9, 10, 11,         # right arm
    0, 1, 20, 3,          # trunk
    12, 13, 14,           # left leg
    16, 17, 18,           # right leg
)

KINECT_20_TO_18 = (
    4, 5, 6, 7,
    8, 9, 10, 11,
    0, 1, 2, 3,
    12, 13, 14,
    16, 17, 18,
)

TABLES = {
    ("h36m-32", "h36m-22"): H36M_32_TO_22,
    ("kinect-25", "kinect-18"): KINECT_25_TO_18,
    ("kinect-20", "kinect-18"): KINECT_20_TO_18,
}


def from_array(array, preset, index_table=None, units=None, frame_interval_ms=40.0,
               frame_step=1, label=None):
    """[T, J_src, D] array -> MotionSequence on ``preset``.

    ``index_table`` picks and orders source joints; ``frame_step`` keeps
    every n-th frame (down-sampling).
    """
    spec = get_preset(preset, units)
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim != 3:
        raise DataError(f"expected a [T, J, D] array, got shape {arr.shape}")
    if index_table is not None:
        if max(index_table) >= arr.shape[1]:
            raise DataError(f"index table needs {max(index_table) + 1} source joints, "
                            f"array has {arr.shape[1]}")
        arr = arr[:, list(index_table), :]
    return MotionSequence(spec, arr[::frame_step], frame_interval_ms * frame_step, label)

"""
TUM trajectory files

One line per frame: ``timestamp tx ty tz qx qy qz qw`` describing the
camera-to-world transform. Timestamps are frame indices.
"""

from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from cognimap.core.exceptions import IngestError
from cognimap.geometry.se3 import orthonormalize
from cognimap.models.geometry_models import Pose


def format_tum(poses: Sequence[Pose], timestamps: Optional[Sequence[float]] = None) -> str:
    stamps = list(range(len(poses))) if timestamps is None else list(timestamps)
    lines = []
    for stamp, pose in zip(stamps, poses):
        center = pose.center
        qx, qy, qz, qw = Rotation.from_matrix(pose.rotation.T).as_quat()
        lines.append(f"{float(stamp):.6f} {center[0]:.9f} {center[1]:.9f} {center[2]:.9f} "
                     f"{qx:.12f} {qy:.12f} {qz:.12f} {qw:.12f}")
    return "\n".join(lines) + ("\n" if lines else "")


def write_tum(path: Union[str, Path], poses: Sequence[Pose], timestamps: Optional[Sequence[float]] = None) -> None:
    """Write world-to-camera poses as a TUM trajectory"""
    Path(path).write_text(format_tum(poses, timestamps), encoding="utf-8")


def read_tum(path: Union[str, Path]) -> Tuple[np.ndarray, List[Pose]]:
    """
    Read a TUM trajectory back into world-to-camera poses

    Raises:
        IngestError: unreadable file or a malformed line
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IngestError(f"cannot read trajectory: {e}", path=str(path)) from e

    stamps: List[float] = []
    poses: List[Pose] = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values = [float(v) for v in line.split()]
        except ValueError as e:
            raise IngestError(f"non-numeric value on line {number}", path=str(path), field="trajectory") from e
        if len(values) != 8 or not np.all(np.isfinite(values)):
            raise IngestError(f"line {number} needs 8 finite values", path=str(path), field="trajectory")
        stamp, center, quat = values[0], np.array(values[1:4]), np.array(values[4:8])
        if np.linalg.norm(quat) == 0.0:
            raise IngestError(f"zero quaternion on line {number}", path=str(path), field="trajectory")
        rotation = orthonormalize(Rotation.from_quat(quat).as_matrix().T)
        stamps.append(stamp)
        poses.append(Pose(rotation, -rotation @ center))
    return np.asarray(stamps), poses

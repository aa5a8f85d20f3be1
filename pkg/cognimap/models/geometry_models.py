"""
Camera, pose and per-pixel grid models
"""

from dataclasses import dataclass
from typing import Literal, Tuple

import numpy as np

from cognimap.core.exceptions import InputShapeError, InputValueError


def _frozen(array: np.ndarray, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; pixel (x, y) samples integer coordinates"""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InputValueError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def shape(self) -> Tuple[int, int]:
        """Grid shape as (height, width)"""
        return (self.height, self.width)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @classmethod
    def centered(cls, width: int, height: int, focal: float) -> "Intrinsics":
        """Square-pixel camera with the principal point at the image centre"""
        return cls(fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                   width=width, height=height)


@dataclass(frozen=True)
class Pose:
    """
    Rigid transform mapping world coordinates into the camera frame

    ``p_cam = rotation @ p_world + translation``; the camera centre in the
    world is ``-rotation.T @ translation``.
    """
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise InputShapeError(
                f"pose needs a 3x3 rotation and a 3-vector, got {rotation.shape} and {translation.shape}"
            )
        object.__setattr__(self, "rotation", _frozen(rotation))
        object.__setattr__(self, "translation", _frozen(translation))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Pose":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise InputShapeError(f"expected a 4x4 matrix, got {matrix.shape}")
        return cls(matrix[:3, :3], matrix[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates"""
        return -self.rotation.T @ self.translation

    def orthonormality_error(self) -> float:
        return float(np.linalg.norm(self.rotation.T @ self.rotation - np.eye(3)))

    def is_valid(self, tol: float = 1e-9) -> bool:
        return (self.orthonormality_error() <= tol
                and abs(np.linalg.det(self.rotation) - 1.0) <= tol)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform N x 3 (or 3,) points"""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self) -> int:
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


@dataclass(frozen=True)
class DepthMap:
    """Depth in metres with a validity mask"""
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise InputShapeError(f"depth {values.shape} and validity {valid.shape} must be equal 2-D grids")
        valid = valid & np.isfinite(values) & (values > 0)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", _frozen(valid, dtype=bool))

    @classmethod
    def from_values(cls, values: np.ndarray) -> "DepthMap":
        """Pixels with non-positive or non-finite depth become invalid"""
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.isfinite(values) & (values > 0))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PointMap:
    """Per-pixel 3-D points; entries are NaN where the source depth was invalid"""
    points: np.ndarray
    valid: np.ndarray
    frame: Literal["camera", "world"] = "camera"

    @property
    def shape(self) -> Tuple[int, int]:
        return self.valid.shape

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]


@dataclass(frozen=True)
class FlowField:
    """Pixel displacement grids; flow at (x, y) points to (x + u, y + v) in the other frame"""
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise InputShapeError(f"flow components must be equal 2-D grids, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise InputValueError("flow must be finite everywhere")
        object.__setattr__(self, "u", _frozen(u))
        object.__setattr__(self, "v", _frozen(v))

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def stacked(self) -> np.ndarray:
        """H x W x 2 array"""
        return np.stack([self.u, self.v], axis=-1)

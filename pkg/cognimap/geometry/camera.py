"""
Pinhole camera model: pixel grids, unprojection and projection
"""

from typing import Tuple

import numpy as np

from cognimap.core.exceptions import InputShapeError
from cognimap.models.geometry_models import DepthMap, Intrinsics, PointMap, Pose

DEFAULT_BEHIND_EPS = 1e-6


def pixel_grid(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Integer pixel coordinates (xs, ys), each H x W"""
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def check_shape(shape: Tuple[int, int], k: Intrinsics, what: str) -> None:
    if tuple(shape) != k.shape:
        raise InputShapeError(f"{what} is {shape[1]}x{shape[0]} but intrinsics are {k.width}x{k.height}")


def backproject_pixels(xs: np.ndarray, ys: np.ndarray, depth: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Camera-frame points for pixel coordinates and depths (any matching shapes)"""
    x = (np.asarray(xs, dtype=np.float64) - k.cx) / k.fx
    y = (np.asarray(ys, dtype=np.float64) - k.cy) / k.fy
    depth = np.asarray(depth, dtype=np.float64)
    return np.stack([depth * x, depth * y, depth], axis=-1)


def unproject(depth: DepthMap, k: Intrinsics) -> PointMap:
    """
    Lift a depth map into camera-frame points

    Args:
        depth: Depth map whose size matches the intrinsics
        k: Camera intrinsics

    Returns:
        Camera-frame PointMap with NaN at invalid pixels
    """
    check_shape(depth.shape, k, "depth map")
    xs, ys = pixel_grid(k.height, k.width)
    points = backproject_pixels(xs, ys, depth.values, k)
    points[~depth.valid] = np.nan
    return PointMap(points=points, valid=depth.valid.copy(), frame="camera")


def to_world(points: PointMap, pose: Pose) -> PointMap:
    """Move a camera-frame point map into the world with a world-to-camera pose"""
    world = np.full(points.points.shape, np.nan)
    cam = points.points[points.valid]
    world[points.valid] = (cam - pose.translation) @ pose.rotation
    return PointMap(points=world, valid=points.valid.copy(), frame="world")


def project(points: np.ndarray, k: Intrinsics, eps_z: float = DEFAULT_BEHIND_EPS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Project camera-frame points onto the image plane

    Args:
        points: (..., 3) camera-frame points
        k: Camera intrinsics
        eps_z: Minimum depth in front of the camera

    Returns:
        (pixels, behind): pixels (..., 2), NaN where behind; behind flag (...)
    """
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    behind = ~(z > eps_z)
    safe_z = np.where(behind, 1.0, z)
    u = k.fx * points[..., 0] / safe_z + k.cx
    v = k.fy * points[..., 1] / safe_z + k.cy
    pixels = np.stack([u, v], axis=-1)
    pixels[behind] = np.nan
    return pixels, behind


def in_frame(pixels: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Pixels whose nearest integer pixel lies inside the image"""
    u = pixels[..., 0]
    v = pixels[..., 1]
    with np.errstate(invalid="ignore"):
        return ((u >= -0.5) & (u < k.width - 0.5)
                & (v >= -0.5) & (v < k.height - 0.5))


def round_pixels(pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest integer pixel (column, row) indices"""
    return (np.rint(pixels[..., 0]).astype(np.int64), np.rint(pixels[..., 1]).astype(np.int64))

"""
Voxel-grid helpers

Voxels are axis-aligned cubes anchored at the world origin; cell ``k`` along
an axis covers ``[k * voxel, (k + 1) * voxel)``.
"""

import numpy as np

from cognimap.core.exceptions import InputValueError
from cognimap.models.memory_models import PointCloud


def voxel_keys(points: np.ndarray, voxel: float) -> np.ndarray:
    """Integer cell index of every point (N x 3)"""
    return np.floor(np.asarray(points, dtype=np.float64) / voxel).astype(np.int64)


def voxel_centers(keys: np.ndarray, voxel: float) -> np.ndarray:
    return (keys.astype(np.float64) + 0.5) * voxel


def snap_into_cells(points: np.ndarray, keys: np.ndarray, voxel: float) -> np.ndarray:
    """Replace points that rounding pushed out of their cell by the cell centre"""
    points = np.array(points, dtype=np.float64, copy=True)
    outside = np.any(voxel_keys(points, voxel) != keys, axis=1)
    if outside.any():
        points[outside] = voxel_centers(keys[outside], voxel)
    return points


def quantize_cloud(cloud: PointCloud, voxel: float) -> PointCloud:
    """
    Round a one-point-per-voxel cloud to float32 without leaving any cell

    Stored clouds are float32 on disk; quantizing before storing keeps the
    in-memory bank identical to a reloaded one. Missing confidence becomes
    an explicit 1.0 per point.
    """
    if len(cloud) == 0:
        return cloud
    keys = voxel_keys(cloud.points, voxel)
    rounded = cloud.points.astype(np.float32).astype(np.float64)
    outside = np.any(voxel_keys(rounded, voxel) != keys, axis=1)
    if outside.any():
        rounded[outside] = voxel_centers(keys[outside], voxel).astype(np.float32).astype(np.float64)
    confidence = cloud.weights().astype(np.float32).astype(np.float64)
    return PointCloud(rounded, confidence)


def sort_by_voxel(cloud: PointCloud, voxel: float) -> PointCloud:
    """Canonical order: lexicographic by voxel key"""
    if len(cloud) == 0:
        return cloud
    keys = voxel_keys(cloud.points, voxel)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    confidence = cloud.confidence[order] if cloud.confidence is not None else None
    return PointCloud(cloud.points[order], confidence)


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """
    One confidence-weighted centroid per occupied voxel

    Output is ordered by voxel key. Voxels whose points all have zero
    confidence fall back to the plain centroid. The output confidence is
    the mean member confidence.
    """
    if voxel <= 0:
        raise InputValueError(f"voxel size must be positive, got {voxel}")
    if len(cloud) == 0:
        return PointCloud.empty()

    keys = voxel_keys(cloud.points, voxel)
    unique_keys, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n_cells = unique_keys.shape[0]

    weights = cloud.weights()
    weight_sum = np.bincount(inverse, weights=weights, minlength=n_cells)
    counts = np.bincount(inverse, minlength=n_cells).astype(np.float64)
    unweighted = weight_sum <= 0.0
    if unweighted.any():
        weights = np.where(unweighted[inverse], 1.0, weights)
        weight_sum = np.where(unweighted, counts, weight_sum)

    centroids = np.stack(
        [np.bincount(inverse, weights=weights * cloud.points[:, axis], minlength=n_cells) / weight_sum
         for axis in range(3)],
        axis=1,
    )
    centroids = snap_into_cells(centroids, unique_keys, voxel)

    confidence = None
    if cloud.confidence is not None:
        confidence = np.bincount(inverse, weights=cloud.confidence, minlength=n_cells) / counts
        confidence = np.clip(confidence, 0.0, 1.0)
    return PointCloud(centroids, confidence)


def occupied_voxels(cloud: PointCloud, voxel: float) -> set:
    """Set of occupied cell keys as tuples"""
    if len(cloud) == 0:
        return set()
    return set(map(tuple, voxel_keys(cloud.points, voxel).tolist()))

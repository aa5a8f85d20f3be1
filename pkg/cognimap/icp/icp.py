"""
Point-to-point ICP with weighted closed-form rigid fits
"""

import logging
from typing import Optional, Tuple

import numpy as np

from cognimap.core.exceptions import InputValueError
from cognimap.geometry.se3 import orthonormalize, se3_compose, se3_log
from cognimap.icp.nn_index import NearestNeighborIndex, build_nn_index
from cognimap.models.geometry_models import Pose
from cognimap.models.memory_models import AlignmentResult, PointCloud

logger = logging.getLogger(__name__)

MIN_CORRESPONDENCES = 3
DEFAULT_CORR_FRAC = 0.05
DEFAULT_INLIER_FRAC = 0.02


def weighted_rigid_fit(source: np.ndarray, target: np.ndarray,
                       weights: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rotation and translation minimising the weighted squared distance of
    ``R @ source + t`` to ``target`` (no scale)
    """
    if weights is None:
        weights = np.ones(source.shape[0])
    w = weights / weights.sum()
    mu_s = w @ source
    mu_t = w @ target
    h = (source - mu_s).T @ ((target - mu_t) * w[:, None])
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return rotation, mu_t - rotation @ mu_s


def alignment_statistics(source: PointCloud, index: NearestNeighborIndex, transform: Pose,
                         inlier_dist: float) -> Tuple[int, float]:
    """
    Inlier count and inlier RMSE of ``source`` moved by ``transform``

    The count is the number of distinct target points reached by a source
    point closer than ``inlier_dist``.
    """
    distances, indices = index.query(transform.apply(source.points))
    inliers = distances < inlier_dist
    if not inliers.any():
        return 0, float("inf")
    count = int(np.unique(indices[inliers]).shape[0])
    rmse = float(np.sqrt(np.mean(distances[inliers] ** 2)))
    return count, rmse


def icp_align(
    source: PointCloud,
    target: PointCloud,
    init: Optional[Pose] = None,
    max_iter: int = 50,
    corr_dist: Optional[float] = None,
    inlier_dist: Optional[float] = None,
    tol: float = 1e-6,
    index: Optional[NearestNeighborIndex] = None,
) -> AlignmentResult:
    """
    Register ``source`` onto ``target``

    Args:
        source: Cloud to move
        target: Fixed cloud
        init: Initial source-to-target transform (identity by default)
        max_iter: Iteration cap
        corr_dist: Correspondence gate (5% of target diameter by default)
        inlier_dist: Inlier radius for the final statistics (2% by default)
        tol: Stop once the incremental update's tangent norm drops below this
        index: Prebuilt index over ``target``

    Returns:
        AlignmentResult with ``accepted`` left false; a reason is recorded
        when an iteration found fewer than three correspondences
    """
    if len(source) < MIN_CORRESPONDENCES or len(target) < MIN_CORRESPONDENCES:
        raise InputValueError(
            f"ICP needs at least {MIN_CORRESPONDENCES} points per cloud, got {len(source)} and {len(target)}"
        )
    diameter = target.diameter()
    corr_dist = DEFAULT_CORR_FRAC * diameter if corr_dist is None else corr_dist
    inlier_dist = DEFAULT_INLIER_FRAC * diameter if inlier_dist is None else inlier_dist
    index = index if index is not None else build_nn_index(target)

    transform = init if init is not None else Pose.identity()
    src_weights = source.weights()
    tgt_weights = target.weights()
    mean_distances = []
    reason = ""
    iterations = 0

    for iterations in range(1, max_iter + 1):
        moved = transform.apply(source.points)
        distances, indices = index.query(moved, max_distance=corr_dist)
        matched = indices >= 0
        weights = src_weights[matched] * tgt_weights[indices[matched]]
        if np.count_nonzero(matched) < MIN_CORRESPONDENCES or weights.sum() <= 0.0:
            reason = f"only {int(np.count_nonzero(matched))} correspondences at iteration {iterations}"
            logger.debug(f"ICP stopped: {reason}")
            break
        mean_distances.append(float(distances[matched].mean()))

        rotation, translation = weighted_rigid_fit(moved[matched], target.points[indices[matched]], weights)
        update = Pose(orthonormalize(rotation), translation)
        transform = se3_compose(update, transform)
        transform = Pose(orthonormalize(transform.rotation), transform.translation)
        if np.linalg.norm(se3_log(update)) < tol:
            break

    inlier_count, rmse = alignment_statistics(source, index, transform, inlier_dist)
    return AlignmentResult(
        transform=transform,
        inlier_count=inlier_count,
        rmse=rmse,
        iterations=iterations,
        accepted=False,
        mean_distances=tuple(mean_distances),
        reason=reason,
    )


def overlap_fractions(source: PointCloud, target: PointCloud, transform: Pose, radius: float,
                      index: Optional[NearestNeighborIndex] = None) -> Tuple[float, float]:
    """
    Mutual coverage of two clouds after alignment

    Returns:
        (source fraction within ``radius`` of the target, fraction of the
        target points inside the moved source's bounds, grown by ``radius``,
        that lie within ``radius`` of the moved source). A side with no
        points to judge scores 0.
    """
    if len(source) == 0 or len(target) == 0:
        return 0.0, 0.0
    index = index if index is not None else build_nn_index(target)
    moved = transform.apply(source.points)
    forward_dist, _ = index.query(moved, max_distance=radius)
    forward = float(np.count_nonzero(np.isfinite(forward_dist))) / moved.shape[0]

    lo = moved.min(axis=0) - radius
    hi = moved.max(axis=0) + radius
    inside = np.all((target.points >= lo) & (target.points <= hi), axis=1)
    if not inside.any():
        return forward, 0.0
    backward_dist, _ = build_nn_index(PointCloud(moved)).query(target.points[inside], max_distance=radius)
    backward = float(np.count_nonzero(np.isfinite(backward_dist))) / int(np.count_nonzero(inside))
    return forward, backward

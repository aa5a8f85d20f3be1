"""
Trajectory and mask evaluation metrics

Poses are world-to-camera; absolute errors are measured on camera centers.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from cognimap.core.exceptions import DegenerateInputError, InputShapeError
from cognimap.geometry.se3 import se3_compose, se3_inverse, so3_log
from cognimap.models.geometry_models import Pose


def _check_lengths(est: Sequence[Pose], gt: Sequence[Pose], minimum: int = 2) -> None:
    if len(est) != len(gt):
        raise InputShapeError(f"trajectory lengths differ: {len(est)} estimated, {len(gt)} ground truth")
    if len(est) < minimum:
        raise DegenerateInputError(f"need at least {minimum} poses, got {len(est)}")


def umeyama(source: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rigid (rotation, translation) minimizing ``sum |target - (R source + t)|^2``

    No scale is estimated.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    covariance = (target - mu_t).T @ (source - mu_s) / source.shape[0]
    u, _, vt = np.linalg.svd(covariance)
    d = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2, 2] = -1.0
    rotation = u @ d @ vt
    return rotation, mu_t - rotation @ mu_s


def aligned_centers(est: Sequence[Pose], gt: Sequence[Pose]) -> Tuple[np.ndarray, np.ndarray]:
    """Estimated camera centers rigidly aligned onto the ground truth, and the ground-truth centers"""
    est_c = np.array([p.center for p in est])
    gt_c = np.array([p.center for p in gt])
    rotation, translation = umeyama(est_c, gt_c)
    return est_c @ rotation.T + translation, gt_c


def ate(est: Sequence[Pose], gt: Sequence[Pose]) -> float:
    """
    Absolute trajectory error in meters

    RMSE of camera-center differences after aligning ``est`` to ``gt``.

    Raises:
        InputShapeError: the trajectories differ in length
        DegenerateInputError: fewer than two poses
    """
    _check_lengths(est, gt)
    aligned, gt_c = aligned_centers(est, gt)
    return float(math.sqrt(np.mean(np.sum((aligned - gt_c) ** 2, axis=1))))


def relative_errors(est: Sequence[Pose], gt: Sequence[Pose], delta: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-pair translation (meters) and rotation (degrees) errors of ``T_i^-1 T_{i+delta}``

    The translation error is the offset of the relative error pose
    ``rel_gt^-1 rel_est``, not the translation part of its twist.
    """
    _check_lengths(est, gt)
    if delta < 1 or delta >= len(est):
        raise DegenerateInputError(f"frame gap {delta} needs 1 <= gap < {len(est)}")
    trans: List[float] = []
    rot: List[float] = []
    for i in range(len(est) - delta):
        rel_est = se3_compose(se3_inverse(est[i]), est[i + delta])
        rel_gt = se3_compose(se3_inverse(gt[i]), gt[i + delta])
        error = se3_compose(se3_inverse(rel_gt), rel_est)
        trans.append(float(np.linalg.norm(error.translation)))
        rot.append(math.degrees(float(np.linalg.norm(so3_log(error.rotation)))))
    return np.array(trans), np.array(rot)


def rpe(est: Sequence[Pose], gt: Sequence[Pose], delta: int = 1) -> Tuple[float, float]:
    """Relative pose error RMSE as (meters, degrees) over a frame gap"""
    trans, rot = relative_errors(est, gt, delta)
    return float(math.sqrt(np.mean(trans ** 2))), float(math.sqrt(np.mean(rot ** 2)))


def mask_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; two empty masks score 1"""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise InputShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def mean_mask_iou(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> Optional[float]:
    if len(preds) != len(gts):
        raise InputShapeError(f"{len(preds)} predicted masks for {len(gts)} ground-truth masks")
    if not preds:
        return None
    return float(np.mean([mask_iou(p, g) for p, g in zip(preds, gts)]))

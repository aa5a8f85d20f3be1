"""
Residuals and analytic Jacobians of the projection, depth, prior and motion factors

Pose Jacobians are taken with respect to a left perturbation
``T <- exp(delta) * T`` with ``delta = (rho, phi)``.
"""

from typing import Tuple

import numpy as np

from cognimap.geometry.camera import DEFAULT_BEHIND_EPS
from cognimap.geometry.se3 import hat, se3_adjoint, se3_compose, se3_diff, se3_inverse, se3_left_jacobian_inverse
from cognimap.models.geometry_models import Intrinsics, Pose


def huber(r_norm: float, delta: float) -> Tuple[float, float]:
    """
    Huber cost and IRLS weight of a residual norm

    ``0.5 * r**2`` inside the knee, ``delta * (r - delta / 2)`` outside; the
    weight is 1 inside and ``delta / r`` outside.
    """
    r = abs(float(r_norm))
    if r <= delta:
        return 0.5 * r * r, 1.0
    return delta * (r - 0.5 * delta), delta / r


def huber_arrays(r_norm: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised huber"""
    r = np.abs(np.asarray(r_norm, dtype=np.float64))
    inside = r <= delta
    cost = np.where(inside, 0.5 * r * r, delta * (r - 0.5 * delta))
    weight = np.where(inside, 1.0, delta / np.maximum(r, delta))
    return cost, weight


def whitener(sigma: np.ndarray) -> np.ndarray:
    """W with ``W.T @ W == inv(sigma)``"""
    return np.linalg.inv(np.linalg.cholesky(np.asarray(sigma, dtype=np.float64)))


# Projection

def residual_projection(
    pose: Pose,
    landmark: np.ndarray,
    k: Intrinsics,
    z: np.ndarray,
    eps_z: float = DEFAULT_BEHIND_EPS,
) -> Tuple[np.ndarray, bool]:
    """
    Reprojection error ``pi(T, L) - z`` in pixels

    Returns:
        (residual, behind); residual is NaN when the landmark is behind the camera
    """
    p = pose.rotation @ np.asarray(landmark, dtype=np.float64) + pose.translation
    if p[2] <= eps_z:
        return np.full(2, np.nan), True
    u = k.fx * p[0] / p[2] + k.cx
    v = k.fy * p[1] / p[2] + k.cy
    return np.array([u, v]) - np.asarray(z, dtype=np.float64), False


def projection_jacobians(pose: Pose, landmark: np.ndarray, k: Intrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """(d r / d delta, d r / d L) of the reprojection residual, 2x6 and 2x3"""
    p = pose.rotation @ np.asarray(landmark, dtype=np.float64) + pose.translation
    x, y, z = p
    d_pi = np.array([[k.fx / z, 0.0, -k.fx * x / (z * z)],
                     [0.0, k.fy / z, -k.fy * y / (z * z)]])
    d_point = np.hstack([np.eye(3), -hat(p)])
    return d_pi @ d_point, d_pi @ pose.rotation


def batch_projection(
    rotations: np.ndarray,
    translations: np.ndarray,
    points: np.ndarray,
    fx: np.ndarray,
    fy: np.ndarray,
    cx: np.ndarray,
    cy: np.ndarray,
    pixels: np.ndarray,
    eps_z: float = DEFAULT_BEHIND_EPS,
    with_jacobians: bool = True,
):
    """
    Residuals (and Jacobians) of many observations at once

    Every argument is stacked per observation. Behind-camera rows get zero
    residual and Jacobians and are flagged.
    """
    p = np.einsum("kij,kj->ki", rotations, points) + translations
    behind = p[:, 2] <= eps_z
    z = np.where(behind, 1.0, p[:, 2])
    u = fx * p[:, 0] / z + cx
    v = fy * p[:, 1] / z + cy
    residual = np.stack([u, v], axis=1) - pixels
    residual[behind] = 0.0
    if not with_jacobians:
        return residual, behind, None, None

    n = p.shape[0]
    d_pi = np.zeros((n, 2, 3))
    d_pi[:, 0, 0] = fx / z
    d_pi[:, 0, 2] = -fx * p[:, 0] / (z * z)
    d_pi[:, 1, 1] = fy / z
    d_pi[:, 1, 2] = -fy * p[:, 1] / (z * z)
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1], skew[:, 0, 2] = -p[:, 2], p[:, 1]
    skew[:, 1, 0], skew[:, 1, 2] = p[:, 2], -p[:, 0]
    skew[:, 2, 0], skew[:, 2, 1] = -p[:, 1], p[:, 0]
    j_pose = np.concatenate([d_pi, -np.einsum("kij,kjl->kil", d_pi, skew)], axis=2)
    j_point = np.einsum("kij,kjl->kil", d_pi, rotations)
    j_pose[behind] = 0.0
    j_point[behind] = 0.0
    return residual, behind, j_pose, j_point


# Depth

def residual_depth(pose: Pose, landmark: np.ndarray, depth: float) -> float:
    """Camera-frame z of the landmark minus the measured depth, meters"""
    p = pose.rotation @ np.asarray(landmark, dtype=np.float64) + pose.translation
    return float(p[2] - depth)


def depth_jacobians(pose: Pose, landmark: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(d r / d delta, d r / d L) of the depth residual, length 6 and 3"""
    p = pose.rotation @ np.asarray(landmark, dtype=np.float64) + pose.translation
    return np.array([0.0, 0.0, 1.0, p[1], -p[0], 0.0]), pose.rotation[2].copy()


def batch_depth(
    rotations: np.ndarray,
    translations: np.ndarray,
    points: np.ndarray,
    depths: np.ndarray,
    eps_z: float = DEFAULT_BEHIND_EPS,
):
    """
    Depth residuals and Jacobians of many observations

    Rows with a NaN depth or a landmark behind the camera come back zero.
    """
    p = np.einsum("kij,kj->ki", rotations, points) + translations
    usable = np.isfinite(depths) & (p[:, 2] > eps_z)
    residual = np.where(usable, p[:, 2] - np.where(usable, depths, 0.0), 0.0)
    j_pose = np.zeros((p.shape[0], 6))
    j_pose[:, 2] = 1.0
    j_pose[:, 3] = p[:, 1]
    j_pose[:, 4] = -p[:, 0]
    j_point = rotations[:, 2, :].copy()
    j_pose[~usable] = 0.0
    j_point[~usable] = 0.0
    return residual, j_pose, j_point


# Prior

def residual_prior(t0: Pose, t0_init: Pose) -> np.ndarray:
    """``log(T0_init^-1 * T0)``"""
    return se3_diff(t0_init, t0)


def prior_jacobian(t0: Pose, t0_init: Pose) -> np.ndarray:
    r = residual_prior(t0, t0_init)
    return se3_left_jacobian_inverse(r) @ se3_adjoint(se3_inverse(t0_init))


# Motion

def _motion_offset(t_prev_init: Pose, t_cur_init: Pose) -> Pose:
    return se3_inverse(se3_compose(se3_inverse(t_prev_init), t_cur_init))


def residual_motion(t_prev: Pose, t_cur: Pose, t_prev_init: Pose, t_cur_init: Pose) -> np.ndarray:
    """Deviation of the current relative motion from the initial one"""
    return se3_diff(se3_compose(se3_inverse(t_prev_init), t_cur_init),
                    se3_compose(se3_inverse(t_prev), t_cur))


def motion_jacobians(t_prev: Pose, t_cur: Pose, t_prev_init: Pose,
                     t_cur_init: Pose) -> Tuple[np.ndarray, np.ndarray]:
    """(d r / d delta_prev, d r / d delta_cur), both 6x6"""
    r = residual_motion(t_prev, t_cur, t_prev_init, t_cur_init)
    offset = se3_compose(_motion_offset(t_prev_init, t_cur_init), se3_inverse(t_prev))
    j_cur = se3_left_jacobian_inverse(r) @ se3_adjoint(offset)
    return -j_cur, j_cur

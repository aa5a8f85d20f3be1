"""
SE(3) manifold operations

Tangent vectors are ordered ``xi = (rho, phi)``: three translational
components followed by the rotation vector. Perturbations are applied on the
left, ``exp(delta) * T``.
"""

import numpy as np
from scipy.spatial.transform import Rotation

from cognimap.models.geometry_models import Pose

_SMALL_ANGLE = 1e-2


def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector"""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy],
                     [wz, 0.0, -wx],
                     [-wy, wx, 0.0]])


def so3_exp(phi: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(phi, dtype=np.float64)).as_matrix()


def so3_log(rotation: np.ndarray) -> np.ndarray:
    # quaternion route: stable for angles at and near pi
    return Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_rotvec()


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense (SVD projection)"""
    u, _, vt = np.linalg.svd(rotation)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    w = hat(phi)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        b = (1.0 - np.cos(theta)) / theta ** 2
        c = (theta - np.sin(theta)) / theta ** 3
    return np.eye(3) + b * w + c * (w @ w)


def so3_left_jacobian_inverse(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    w = hat(phi)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        c = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / theta ** 2
    return np.eye(3) - 0.5 * w + c * (w @ w)


def se3_exp(xi: np.ndarray) -> Pose:
    xi = np.asarray(xi, dtype=np.float64)
    rho, phi = xi[:3], xi[3:]
    return Pose(so3_exp(phi), so3_left_jacobian(phi) @ rho)


def se3_log(pose: Pose) -> np.ndarray:
    phi = so3_log(pose.rotation)
    rho = so3_left_jacobian_inverse(phi) @ pose.translation
    return np.concatenate([rho, phi])


def se3_compose(a: Pose, b: Pose) -> Pose:
    """``a * b``: apply b first, then a"""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def se3_inverse(a: Pose) -> Pose:
    rt = a.rotation.T
    return Pose(rt, -rt @ a.translation)


def se3_diff(a: Pose, b: Pose) -> np.ndarray:
    """Tangent vector taking a to b: ``log(a^-1 * b)``"""
    return se3_log(se3_compose(se3_inverse(a), b))


def se3_retract(pose: Pose, delta: np.ndarray) -> Pose:
    """Left retraction ``exp(delta) * pose`` with the rotation re-orthonormalized"""
    updated = se3_compose(se3_exp(delta), pose)
    return Pose(orthonormalize(updated.rotation), updated.translation)


def se3_adjoint(pose: Pose) -> np.ndarray:
    """6x6 adjoint: ``exp(Ad(T) xi) = T exp(xi) T^-1``"""
    r = pose.rotation
    out = np.zeros((6, 6))
    out[:3, :3] = r
    out[:3, 3:] = hat(pose.translation) @ r
    out[3:, 3:] = r
    return out


def _q_block(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    rx = hat(rho)
    px = hat(phi)
    if theta < _SMALL_ANGLE:
        t2 = theta * theta
        c1 = 1.0 / 6.0 - t2 / 120.0
        c2 = 1.0 / 24.0 - t2 / 720.0
        c3 = 1.0 / 120.0 - t2 / 2520.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        c1 = (theta - s) / theta ** 3
        c2 = (theta * theta + 2.0 * c - 2.0) / (2.0 * theta ** 4)
        c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta ** 5)
    pr = px @ rx
    rp = rx @ px
    prp = pr @ px
    return (0.5 * rx
            + c1 * (pr + rp + prp)
            + c2 * (px @ pr + rp @ px - 3.0 * prp)
            + c3 * (prp @ px + px @ prp))


def se3_left_jacobian(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=np.float64)
    rho, phi = xi[:3], xi[3:]
    j = so3_left_jacobian(phi)
    out = np.zeros((6, 6))
    out[:3, :3] = j
    out[3:, 3:] = j
    out[:3, 3:] = _q_block(rho, phi)
    return out


def se3_left_jacobian_inverse(xi: np.ndarray) -> np.ndarray:
    """``log(exp(delta) * exp(xi)) ~= xi + J_l^-1(xi) delta``"""
    xi = np.asarray(xi, dtype=np.float64)
    rho, phi = xi[:3], xi[3:]
    j_inv = so3_left_jacobian_inverse(phi)
    out = np.zeros((6, 6))
    out[:3, :3] = j_inv
    out[3:, 3:] = j_inv
    out[:3, 3:] = -j_inv @ _q_block(rho, phi) @ j_inv
    return out


def random_pose(rng: np.random.Generator, max_angle: float = np.pi, max_translation: float = 1.0) -> Pose:
    """Uniformly oriented rotation axis with angle below max_angle"""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    translation = rng.uniform(-max_translation, max_translation, size=3)
    return Pose(so3_exp(axis * angle), translation)

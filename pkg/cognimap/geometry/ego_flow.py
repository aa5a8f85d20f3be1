"""
Ego-motion flow: the optical flow a static scene shows under camera motion alone
"""

from typing import Tuple

import numpy as np

from cognimap.geometry.camera import DEFAULT_BEHIND_EPS, check_shape, in_frame, pixel_grid, project, unproject
from cognimap.geometry.se3 import se3_compose, se3_inverse
from cognimap.models.geometry_models import DepthMap, FlowField, Intrinsics, Pose


def relative_pose(e_t: Pose, e_t2: Pose) -> Pose:
    """Transform from camera t coordinates to camera t2 coordinates"""
    return se3_compose(e_t2, se3_inverse(e_t))


def ego_flow(
    depth_t: DepthMap,
    k_t: Intrinsics,
    k_t2: Intrinsics,
    e_t: Pose,
    e_t2: Pose,
    eps_z: float = DEFAULT_BEHIND_EPS,
) -> Tuple[FlowField, np.ndarray]:
    """
    Expected flow from frame t to frame t2 for static geometry

    Every valid pixel of frame t is lifted with its depth, carried into camera
    t2 by the relative pose and projected with ``k_t2``.

    Returns:
        (flow, valid): flow is zero where invalid; invalid pixels have no depth,
        land behind camera t2 or fall outside frame t2
    """
    check_shape(depth_t.shape, k_t, "depth map")
    points = unproject(depth_t, k_t)
    rel = relative_pose(e_t, e_t2)

    cam2 = np.where(points.valid[..., None], points.points, 0.0) @ rel.rotation.T + rel.translation
    pixels, behind = project(cam2, k_t2, eps_z)
    valid = points.valid & ~behind & in_frame(pixels, k_t2)

    xs, ys = pixel_grid(k_t.height, k_t.width)
    u = np.where(valid, pixels[..., 0] - xs, 0.0)
    v = np.where(valid, pixels[..., 1] - ys, 0.0)
    return FlowField(u, v), valid

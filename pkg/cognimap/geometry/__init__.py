# Geometry package
from cognimap.geometry.camera import backproject_pixels, in_frame, pixel_grid, project, to_world, unproject
from cognimap.geometry.ego_flow import ego_flow, relative_pose
from cognimap.geometry.se3 import (
    orthonormalize,
    se3_adjoint,
    se3_compose,
    se3_diff,
    se3_exp,
    se3_inverse,
    se3_left_jacobian,
    se3_left_jacobian_inverse,
    se3_log,
    se3_retract,
)

__all__ = [
    "backproject_pixels", "in_frame", "pixel_grid", "project", "to_world", "unproject",
    "ego_flow", "relative_pose",
    "orthonormalize", "se3_adjoint", "se3_compose", "se3_diff", "se3_exp", "se3_inverse",
    "se3_left_jacobian", "se3_left_jacobian_inverse", "se3_log", "se3_retract",
]

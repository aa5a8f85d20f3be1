"""
Seeded pose perturbations for noise-robustness runs
"""

from typing import List, Sequence

import numpy as np

from cognimap.geometry.se3 import se3_compose, so3_exp
from cognimap.models.geometry_models import Pose


def perturb_poses(
    poses: Sequence[Pose],
    sigma_rot: float,
    sigma_trans: float,
    seed: int,
    keep_first: bool = True,
) -> List[Pose]:
    """
    Right-multiply every pose by a random rigid transform

    The rotation is a Gaussian rotation vector with ``sigma_rot`` radians per
    axis, the translation Gaussian with ``sigma_trans`` metres per axis.
    With ``keep_first`` the first pose is returned unchanged and the draws
    of the others do not depend on it.
    """
    rng = np.random.default_rng(seed)
    noisy: List[Pose] = []
    for i, pose in enumerate(poses):
        phi = rng.normal(0.0, 1.0, 3) * sigma_rot
        rho = rng.normal(0.0, 1.0, 3) * sigma_trans
        if i == 0 and keep_first:
            noisy.append(pose)
            continue
        noisy.append(se3_compose(pose, Pose(so3_exp(phi), rho)))
    return noisy

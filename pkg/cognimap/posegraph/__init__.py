# Pose graph package
from cognimap.posegraph.factors import huber, residual_motion, residual_prior, residual_projection
from cognimap.posegraph.landmarks import (
    associate_landmarks,
    association_config,
    build_problem,
    inject_memory_landmarks,
    select_landmarks,
    track_candidates,
)
from cognimap.posegraph.solver import LevenbergMarquardtSolver, solve
from cognimap.posegraph.trajectory_io import read_tum, write_tum

__all__ = [
    "huber",
    "residual_projection",
    "residual_prior",
    "residual_motion",
    "select_landmarks",
    "track_candidates",
    "associate_landmarks",
    "association_config",
    "inject_memory_landmarks",
    "build_problem",
    "LevenbergMarquardtSolver",
    "solve",
    "read_tum",
    "write_tum",
]

"""
Factor-graph models: landmarks, observations, problems and solver reports
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from cognimap.core.exceptions import ContractViolationError, InputShapeError, InputValueError
from cognimap.models.geometry_models import Intrinsics, Pose


def _check_spd(matrix: np.ndarray, size: int, what: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (size, size):
        raise InputShapeError(f"{what} must be {size}x{size}, got {matrix.shape}")
    if not np.allclose(matrix, matrix.T, atol=1e-12):
        raise InputValueError(f"{what} must be symmetric")
    if np.linalg.eigvalsh(matrix).min() <= 0.0:
        raise InputValueError(f"{what} must be positive definite")
    return matrix


@dataclass
class Landmark:
    """Static world point; ``members`` counts the points averaged into ``position``"""
    id: int
    position: np.ndarray
    from_memory: bool = False
    fixed: bool = False
    track_id: Optional[int] = None
    members: int = 1

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.position)):
            raise InputValueError(f"landmark {self.id} has a non-finite position")

    def absorb(self, point: np.ndarray) -> None:
        """Fold one more member point into the running mean"""
        self.members += 1
        self.position = self.position + (np.asarray(point, dtype=np.float64) - self.position) / self.members


@dataclass
class Observation:
    """
    A pixel measurement of a landmark, optionally with its measured depth

    ``depth`` is the camera-frame z in meters and ``depth_sigma`` its standard
    deviation; both are None for pure reprojection observations.
    """
    frame: int
    landmark: int
    pixel: np.ndarray
    sigma: np.ndarray = field(default_factory=lambda: np.eye(2))
    active: bool = True
    depth: Optional[float] = None
    depth_sigma: Optional[float] = None

    def __post_init__(self):
        self.pixel = np.asarray(self.pixel, dtype=np.float64).reshape(2)
        self.sigma = _check_spd(self.sigma, 2, "observation covariance")
        if (self.depth is None) != (self.depth_sigma is None):
            raise InputValueError("depth and depth_sigma must be given together")
        if self.depth is not None:
            self.depth = float(self.depth)
            self.depth_sigma = float(self.depth_sigma)
            if not (np.isfinite(self.depth) and self.depth > 0.0):
                raise InputValueError(f"observation depth must be positive, got {self.depth}")
            if not (np.isfinite(self.depth_sigma) and self.depth_sigma > 0.0):
                raise InputValueError(f"depth sigma must be positive, got {self.depth_sigma}")

    @property
    def has_depth(self) -> bool:
        return self.depth is not None


@dataclass(frozen=True)
class LandmarkCandidate:
    """A static pixel lifted to the world with its frame's initial pose"""
    frame: int
    pixel: np.ndarray
    point: np.ndarray
    track_id: Optional[int] = None
    depth: Optional[float] = None


@dataclass(frozen=True)
class AssociationConfig:
    tau_min: float
    alpha_assoc: float
    d_scene: float

    def __post_init__(self):
        if self.tau_min <= 0:
            raise InputValueError("tau_min must be positive")
        if not 0.0 < self.alpha_assoc < 1.0:
            raise InputValueError("alpha_assoc must lie in (0, 1)")
        if self.d_scene < 0:
            raise InputValueError("scene diameter must be non-negative")

    @property
    def tau_dist(self) -> float:
        """Association radius, growing with the scene size"""
        return max(self.tau_min, self.d_scene * self.alpha_assoc)


@dataclass
class FactorGraphProblem:
    """
    Poses, landmarks and observations of one sequence

    ``init_poses`` hold the priors: the first anchors the gauge and
    consecutive pairs define the motion factors.
    """
    poses: List[Pose]
    init_poses: List[Pose]
    intrinsics: List[Intrinsics]
    landmarks: List[Landmark]
    observations: List[Observation]
    sigma_prior: np.ndarray = field(default_factory=lambda: np.eye(6) * 1e-6)
    sigma_motion: np.ndarray = field(default_factory=lambda: np.eye(6) * 1e-2)
    huber_delta: float = 2.0
    alpha_mem: float = 0.25

    def __post_init__(self):
        self.sigma_prior = _check_spd(self.sigma_prior, 6, "prior covariance")
        self.sigma_motion = _check_spd(self.sigma_motion, 6, "motion covariance")
        self.validate()

    def validate(self) -> None:
        n = len(self.poses)
        if n == 0:
            raise ContractViolationError("a factor graph needs at least one pose")
        if len(self.init_poses) != n or len(self.intrinsics) != n:
            raise ContractViolationError(
                f"{n} poses but {len(self.init_poses)} priors and {len(self.intrinsics)} intrinsics"
            )
        ids = [lm.id for lm in self.landmarks]
        if len(set(ids)) != len(ids):
            raise ContractViolationError("landmark ids must be unique")
        known = set(ids)
        for obs in self.observations:
            if not 0 <= obs.frame < n:
                raise ContractViolationError(f"observation references missing frame {obs.frame}")
            if obs.landmark not in known:
                raise ContractViolationError(f"observation references missing landmark {obs.landmark}")

    def landmark_index(self) -> dict:
        return {lm.id: i for i, lm in enumerate(self.landmarks)}

    def next_landmark_id(self) -> int:
        return max((lm.id for lm in self.landmarks), default=-1) + 1


@dataclass
class SolveReport:
    """
    Solver diagnostics

    ``costs`` holds one list per outer round: the cost before the first step
    followed by the cost after each accepted step.
    """
    costs: List[List[float]] = field(default_factory=list)
    iterations: int = 0
    rejected_steps: int = 0
    converged: bool = False
    termination: str = ""
    deactivated: int = 0
    behind_camera: int = 0
    final_lambda: float = 0.0

    @property
    def initial_cost(self) -> float:
        return self.costs[0][0] if self.costs and self.costs[0] else float("nan")

    @property
    def final_cost(self) -> float:
        return self.costs[-1][-1] if self.costs and self.costs[-1] else float("nan")


@dataclass
class SolveResult:
    poses: List[Pose]
    landmarks: List[Landmark]
    observations: List[Observation]
    report: SolveReport

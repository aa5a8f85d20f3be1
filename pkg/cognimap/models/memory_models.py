"""
Point cloud, feature and memory-bank models
"""

from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np

from cognimap.core.exceptions import InputShapeError, InputValueError
from cognimap.models.geometry_models import Pose

VISUAL_DIM = 1024
GEO_DIM = 512

FeatureKind = Literal["visual2d", "geometric3d"]
FEATURE_DIMS: Dict[str, int] = {"visual2d": VISUAL_DIM, "geometric3d": GEO_DIM}


@dataclass(frozen=True)
class FeatureVec:
    """Fixed-length descriptor; 1024 values for visual2d, 512 for geometric3d"""
    values: np.ndarray
    kind: FeatureKind = "visual2d"

    def __post_init__(self):
        if self.kind not in FEATURE_DIMS:
            raise InputValueError(f"unknown feature kind {self.kind!r}")
        values = np.asarray(self.values, dtype=np.float32).reshape(-1)
        if values.shape[0] != FEATURE_DIMS[self.kind]:
            raise InputShapeError(
                f"{self.kind} features have {FEATURE_DIMS[self.kind]} values, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise InputValueError("feature values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def distance(self, other: "FeatureVec") -> float:
        """L2 distance computed in float64"""
        return float(np.linalg.norm(self.values.astype(np.float64) - other.values.astype(np.float64)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVec):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash((self.kind, self.values.tobytes()))


@dataclass(frozen=True)
class PointCloud:
    """N x 3 points with optional per-point confidence in [0, 1]"""
    points: np.ndarray
    confidence: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise InputValueError("point coordinates must be finite")
        object.__setattr__(self, "points", points)
        if self.confidence is not None:
            confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
            if confidence.shape[0] != points.shape[0]:
                raise InputShapeError(
                    f"{confidence.shape[0]} confidences for {points.shape[0]} points"
                )
            if np.any(~np.isfinite(confidence)) or np.any(confidence < 0) or np.any(confidence > 1):
                raise InputValueError("confidence values must lie in [0, 1]")
            object.__setattr__(self, "confidence", confidence)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def weights(self) -> np.ndarray:
        """Confidence as weights; uniform when absent"""
        if self.confidence is None:
            return np.ones(len(self))
        return self.confidence

    def centroid(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(3)
        return self.points.mean(axis=0)

    def diameter(self) -> float:
        """Bounding-box diagonal"""
        if len(self) == 0:
            return 0.0
        return float(np.linalg.norm(self.points.max(axis=0) - self.points.min(axis=0)))

    def transformed(self, pose: Pose) -> "PointCloud":
        return PointCloud(pose.apply(self.points), self.confidence)

    def concatenate(self, other: "PointCloud") -> "PointCloud":
        if self.confidence is None and other.confidence is None:
            return PointCloud(np.vstack([self.points, other.points]))
        return PointCloud(np.vstack([self.points, other.points]),
                          np.concatenate([self.weights(), other.weights()]))


@dataclass(frozen=True)
class AlignmentResult:
    """
    ICP outcome; ``transform`` maps source coordinates into the target frame

    ``accepted`` is set by the caller's verification policy; ICP itself only
    marks failed alignments.
    """
    transform: Pose
    inlier_count: int
    rmse: float
    iterations: int
    accepted: bool = False
    mean_distances: Tuple[float, ...] = ()
    reason: str = ""

    def with_decision(self, accepted: bool, reason: str = "") -> "AlignmentResult":
        return AlignmentResult(self.transform, self.inlier_count, self.rmse, self.iterations,
                               accepted, self.mean_distances, reason or self.reason)


@dataclass
class MemoryMap:
    """
    One stored scene

    ``created`` is the bank visit counter at creation, ``updated`` the number
    of merges applied since.
    """
    map_id: int
    static_cloud: PointCloud
    keyframe_feats: List[Tuple[int, FeatureVec]]
    geo_feat: Optional[FeatureVec]
    voxel_size: float
    created: int = 0
    updated: int = 0


@dataclass(frozen=True)
class TableMatch:
    """A feature-table hit"""
    index: int
    map_id: int
    frame_id: int
    distance: float


@dataclass(frozen=True)
class RecallResult:
    """
    Outcome of matching a query sequence against the bank

    ``candidate_map`` is set only for accepted recalls; ``voted_map`` keeps the
    strict vote winner for diagnostics even when verification rejected it.
    """
    candidate_map: Optional[int]
    votes: Dict[int, int] = field(default_factory=dict)
    alignment: Optional[AlignmentResult] = None
    voted_map: Optional[int] = None
    stage: str = "vote"
    reason: str = ""

    @property
    def accepted(self) -> bool:
        return self.candidate_map is not None

    @classmethod
    def rejected(cls, votes: Optional[Dict[int, int]] = None, stage: str = "vote", reason: str = "",
                 voted_map: Optional[int] = None,
                 alignment: Optional[AlignmentResult] = None) -> "RecallResult":
        return cls(candidate_map=None, votes=dict(votes or {}), alignment=alignment,
                   voted_map=voted_map, stage=stage, reason=reason)

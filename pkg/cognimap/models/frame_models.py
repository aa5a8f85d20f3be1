"""
Per-frame prior bundle
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from cognimap.core.exceptions import InputShapeError, InputValueError
from cognimap.models.geometry_models import DepthMap, FlowField, Intrinsics, Pose
from cognimap.models.memory_models import FeatureVec
from cognimap.models.motion_models import KeypointMatches


@dataclass(frozen=True)
class FrameBundle:
    """
    Everything the pipeline knows about one frame

    ``flow_prev`` is the flow from the previous frame into this one, sampled
    on the previous frame's grid. ``matches_prev`` pairs a pixel of the
    previous frame with a pixel of this frame.
    """
    frame_id: int
    intrinsics: Intrinsics
    init_pose: Pose
    depth: DepthMap
    confidence: np.ndarray
    flow_prev: Optional[FlowField] = None
    visual_feat: Optional[FeatureVec] = None
    matches_prev: Optional[KeypointMatches] = None

    def __post_init__(self):
        shape = self.intrinsics.shape
        if self.depth.shape != shape:
            raise InputShapeError(f"frame {self.frame_id}: depth {self.depth.shape} does not match {shape}")
        confidence = np.asarray(self.confidence, dtype=np.float64)
        if confidence.shape != shape:
            raise InputShapeError(f"frame {self.frame_id}: confidence {confidence.shape} does not match {shape}")
        if not np.all(np.isfinite(confidence)) or confidence.min() < 0.0 or confidence.max() > 1.0:
            raise InputValueError(f"frame {self.frame_id}: confidence must lie in [0, 1]")
        confidence = confidence.copy()
        confidence.setflags(write=False)
        object.__setattr__(self, "confidence", confidence)
        if self.flow_prev is not None and self.flow_prev.shape != shape:
            raise InputShapeError(f"frame {self.frame_id}: flow {self.flow_prev.shape} does not match {shape}")
        if self.visual_feat is not None and self.visual_feat.kind != "visual2d":
            raise InputValueError(f"frame {self.frame_id}: visual feature has kind {self.visual_feat.kind}")

    @property
    def shape(self):
        return self.intrinsics.shape

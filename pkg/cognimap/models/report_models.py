"""
Serialized report and manifest models
"""

import math
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class MetricsReport(BaseModel):
    """
    Evaluation summary written as metrics.json

    Trajectory errors stay empty for runs without ground truth.
    """
    ate_rmse: Optional[float] = Field(default=None, ge=0.0)
    rpe_trans: Optional[float] = Field(default=None, ge=0.0)
    rpe_rot: Optional[float] = Field(default=None, ge=0.0)
    mask_iou: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    stage_times: Dict[str, float] = Field(default_factory=dict)
    ate_initial: Optional[float] = Field(default=None, ge=0.0)
    rpe_delta: int = Field(default=1, ge=1)
    frames: int = Field(default=0, ge=0)
    maps_created: int = Field(default=0, ge=0)
    maps_updated: int = Field(default=0, ge=0)
    peak_rss_mb: Optional[float] = Field(default=None, ge=0.0)

    @field_validator("ate_rmse", "rpe_trans", "rpe_rot", "mask_iou", "ate_initial", "peak_rss_mb")
    @classmethod
    def _finite(cls, v):
        if v is not None and not math.isfinite(v):
            raise ValueError("metric values must be finite")
        return v

    @field_validator("stage_times")
    @classmethod
    def _finite_times(cls, v: Dict[str, float]):
        for stage, seconds in v.items():
            if not math.isfinite(seconds) or seconds < 0:
                raise ValueError(f"stage time for {stage!r} must be finite and non-negative")
        return v


class MapRecord(BaseModel):
    """Registry row of one stored map"""
    model_config = ConfigDict(extra="forbid")

    map_id: int = Field(..., ge=1)
    cloud_file: str
    points: int = Field(..., ge=0)
    keyframes: List[int] = Field(default_factory=list)
    voxel_size: float = Field(..., gt=0.0)
    geo_feat: Optional[List[float]] = None
    created: int = 0
    updated: int = 0


class BankManifest(BaseModel):
    """Companion mapping file of a persisted memory bank"""
    model_config = ConfigDict(extra="forbid")

    version: int = 1
    feature_file: str = "features.bin"
    feature_dim: int = 1024
    entry_count: int = Field(default=0, ge=0)
    next_map_id: int = Field(default=1, ge=1)
    visit_count: int = Field(default=0, ge=0)
    hash_planes: int = 16
    hash_seed: int = 0
    voxel_sizes: Dict[str, float] = Field(default_factory=dict)
    thresholds: Dict[str, Optional[float]] = Field(default_factory=dict)
    maps: List[MapRecord] = Field(default_factory=list)

"""
Application configuration settings

Process-level settings come from the environment (and an optional .env file).
Pipeline tuning lives in PipelineConfig, loaded from flat key=value files and
command-line overrides.
"""
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from cognimap.core.exceptions import ConfigError


class Settings(BaseSettings):
    """Process settings"""

    # Application
    ENVIRONMENT: str = Field(default="development")
    DEBUG: bool = Field(default=False)
    LOG_LEVEL: str = Field(default="INFO")
    LOG_FORMAT: Literal["default", "detailed", "json"] = Field(default="default")
    LOG_DIR: str = Field(default="logs")
    LOG_TO_FILE: bool = Field(default=False)

    # Runs
    DEFAULT_SEED: int = Field(default=0)
    DEFAULT_BANK_DIR: Optional[str] = Field(default=None)
    REPORT_PEAK_MEMORY: bool = Field(default=True)

    # Third-party loggers silenced below WARNING
    QUIET_LOGGERS: Optional[List[str]] = Field(
        default_factory=lambda: ["matplotlib", "numba", "PIL"]
    )

    @field_validator("QUIET_LOGGERS", mode="before")
    @classmethod
    def _split_csv(cls, v):
        if isinstance(v, str):
            return [item.strip() for item in v.split(",") if item.strip()]
        return v

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def _upper_level(cls, v):
        return v.upper() if isinstance(v, str) else v

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    @property
    def log_file(self) -> Path:
        """Path of the rotating log file"""
        return Path(self.LOG_DIR) / "cognimap.log"


class PipelineConfig(BaseModel):
    """
    Every tunable of the pipeline with its default

    Keys are flat so that a config file is plain ``key=value`` text. Fractions
    are relative to a scene or cloud diameter unless the name says otherwise.
    """

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    seed: int = 0

    # Pipeline
    cadence: int = Field(default=20, ge=1)
    accumulation_stride: int = Field(default=4, ge=1)
    conf_min: float = Field(default=0.5, ge=0.0)
    create_new_maps: bool = True

    # Motion cues
    gmm_components: int = Field(default=3, ge=1)
    gmm_max_iter: int = Field(default=100, ge=1)
    gmm_tol: float = Field(default=1e-8, gt=0.0)
    gmm_cov_floor: float = Field(default=1e-6, gt=0.0)
    # K fixed at gmm_components unless BIC picks among 1..gmm_components
    gmm_select_bic: bool = False
    mag_k: float = Field(default=3.0, gt=0.0)
    ang_max_deg: float = Field(default=45.0, gt=0.0, le=180.0)
    static_eps: float = Field(default=1e-3, ge=0.0)
    new_mover_fraction: float = Field(default=0.01, ge=0.0, le=1.0)
    stale_mask_fraction: float = Field(default=0.02, ge=0.0, le=1.0)
    flow_geo_support: float = Field(default=0.5, ge=0.0, le=1.0)
    # max residual flow (px) at or below which a frame pair counts as static
    geo_residual_floor: float = Field(default=0.1, ge=0.0)
    behind_eps: float = Field(default=1e-6, gt=0.0)

    # ICP
    icp_max_iter: int = Field(default=50, ge=1)
    icp_corr_frac: float = Field(default=0.05, gt=0.0)
    icp_inlier_frac: float = Field(default=0.02, gt=0.0)
    icp_tol: float = Field(default=1e-6, gt=0.0)

    # Memory bank
    voxel_frac: float = Field(default=0.01, gt=0.0)
    voxel_size: Optional[float] = Field(default=None, gt=0.0)
    leaf_capacity: int = Field(default=64, ge=1)
    keyframe_distance: Optional[float] = Field(default=None, ge=0.0)
    hash_planes: int = Field(default=16, ge=1, le=62)
    exact_fallback_below: int = Field(default=10000, ge=0)
    d_match_scale: float = Field(default=0.7, gt=0.0)
    d_match: Optional[float] = Field(default=None, gt=0.0)
    v_min_abs: int = Field(default=2, ge=1)
    v_min_frac: float = Field(default=0.3, ge=0.0, le=1.0)
    n_inlier_abs: int = Field(default=100, ge=0)
    n_inlier_frac: float = Field(default=0.1, ge=0.0, le=1.0)
    r_max_frac: float = Field(default=0.03, gt=0.0)
    recall_mode: Literal["2d", "2d3d", "full"] = "full"
    geo_rank_tolerance: float = Field(default=1.05, ge=1.0)
    icp_overlap_min: float = Field(default=0.6, ge=0.0, le=1.0)

    # Pose graph
    grid_step: int = Field(default=8, ge=1)
    track_length: int = Field(default=8, ge=1)
    tau_min: float = Field(default=0.05, gt=0.0)
    alpha_assoc: float = Field(default=0.01, gt=0.0, lt=1.0)
    alpha_mem: float = Field(default=0.25, gt=0.0, le=1.0)
    memory_landmarks_fixed: bool = False
    huber_delta: float = Field(default=2.0, gt=0.0)
    sigma_proj: float = Field(default=1.0, gt=0.0)
    # relative standard deviation of measured depths; None drops depth factors
    sigma_depth_rel: Optional[float] = Field(default=0.02, gt=0.0)
    sigma_prior: float = Field(default=1e-6, gt=0.0)
    sigma_motion_rot: float = Field(default=1e-2, gt=0.0)
    sigma_motion_trans: float = Field(default=1e-2, gt=0.0)
    lm_max_iter: int = Field(default=100, ge=1)
    lm_lambda_init: float = Field(default=1e-3, gt=0.0)
    lm_lambda_max: float = Field(default=1e8, gt=0.0)
    outlier_factor: float = Field(default=3.0, gt=0.0)
    outer_iterations: int = Field(default=3, ge=1)

    @model_validator(mode="after")
    def _check_fractions(self) -> "PipelineConfig":
        if self.icp_inlier_frac > self.icp_corr_frac:
            raise ValueError("icp_inlier_frac must not exceed icp_corr_frac")
        return self

    @property
    def ang_max(self) -> float:
        """Angular deviation limit in radians"""
        return math.radians(self.ang_max_deg)

    def v_min(self, n_queries: int) -> int:
        """Minimum vote count for a recall candidate"""
        return max(self.v_min_abs, math.ceil(self.v_min_frac * n_queries))

    def n_inlier(self, n_query_points: int) -> int:
        """Minimum ICP inlier count for accepting a recall"""
        return max(self.n_inlier_abs, math.ceil(self.n_inlier_frac * n_query_points))

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        """Return a validated copy with the given fields replaced"""
        try:
            return PipelineConfig(**{**self.model_dump(), **overrides})
        except ValidationError as e:
            raise ConfigError(_format_validation_error(e)) from e


def _format_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(loc) for loc in item.get("loc", ())) or "config"
        parts.append(f"{location}: {item.get('msg')}")
    return "; ".join(parts)


def parse_overrides(pairs: Optional[List[str]]) -> Dict[str, str]:
    """Parse repeated ``key=value`` command-line overrides"""
    overrides: Dict[str, str] = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def _clean_values(raw: Mapping[str, Optional[str]]) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        if value is None:
            raise ConfigError(f"config key {key!r} has no value")
        if value.strip().lower() in ("none", "null", ""):
            values[key] = None
        else:
            values[key] = value.strip()
    return values


def load_pipeline_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> PipelineConfig:
    """
    Build a PipelineConfig from a key=value file plus overrides

    Args:
        path: Optional flat config file; ``#`` comments and blank lines are allowed
        overrides: Values that win over the file (already typed or strings)

    Returns:
        Validated PipelineConfig

    Raises:
        ConfigError: unreadable file, unknown key or invalid value
    """
    values: Dict[str, Any] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        values.update(_clean_values(dotenv_values(config_path, interpolate=False)))

    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    try:
        return PipelineConfig(**values)
    except ValidationError as e:
        raise ConfigError(_format_validation_error(e)) from e


def dump_pipeline_config(config: PipelineConfig) -> str:
    """Render a config back to key=value text"""
    lines = []
    for key, value in config.model_dump().items():
        lines.append(f"{key}={'none' if value is None else value}")
    return "\n".join(lines) + "\n"


# Create global settings instance
settings = Settings()

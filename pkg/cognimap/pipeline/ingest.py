"""
Lazy reader for sequence directories
"""

import logging
import re
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np

from cognimap.core.exceptions import IngestError
from cognimap.models.frame_models import FrameBundle
from cognimap.models.geometry_models import DepthMap, FlowField, Intrinsics, Pose
from cognimap.models.memory_models import VISUAL_DIM, FeatureVec
from cognimap.pipeline.formats import (
    CONF_SUFFIX,
    DEPTH_SUFFIX,
    FEAT_SUFFIX,
    FLOW_SUFFIX,
    INTRINSICS_FILE,
    MASK_SUFFIX,
    MATCHES_SUFFIX,
    POSE_SUFFIX,
    PathLike,
    frame_stem,
    parse_intrinsics,
    parse_matches,
    parse_pose,
    read_grid,
    read_pgm,
)
from cognimap.posegraph.trajectory_io import read_tum

logger = logging.getLogger(__name__)

_POSE_NAME = re.compile(r"^(\d{6})\.pose\.txt$")

GT_DIR = "gt"
GT_TRAJECTORY = "trajectory.tum"
GT_MASK_DIR = "masks"


def _read_text(path: Path, field: str) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise IngestError("missing mandatory file", path=str(path), field=field) from e
    except OSError as e:
        raise IngestError(f"cannot read file: {e}", path=str(path), field=field) from e


def _first_bad_pixel(bad: np.ndarray) -> Tuple[int, int]:
    row, col = np.argwhere(bad)[0]
    return int(col), int(row)


class SequenceReader:
    """
    A sequence directory

    Frames are discovered from their pose files and read on demand.
    """

    def __init__(self, root: PathLike):
        self.root = Path(root)
        if not self.root.is_dir():
            raise IngestError("sequence directory not found", path=str(self.root))
        path = self.root / INTRINSICS_FILE
        self.intrinsics: Intrinsics = parse_intrinsics(_read_text(path, "intrinsics"), str(path))
        indices = []
        for entry in self.root.iterdir():
            match = _POSE_NAME.match(entry.name)
            if match:
                indices.append(int(match.group(1)))
        self.frame_indices: List[int] = sorted(indices)
        if not self.frame_indices:
            raise IngestError("no frames found", path=str(self.root), field="pose")

    def __len__(self) -> int:
        return len(self.frame_indices)

    def __iter__(self) -> Iterator[FrameBundle]:
        for index in self.frame_indices:
            yield self.read_frame(index)

    def _grid(self, index: int, suffix: str, field: str, channels: int, required: bool) -> Optional[np.ndarray]:
        path = self.root / f"{frame_stem(index)}{suffix}"
        if not path.exists():
            if required:
                raise IngestError("missing mandatory file", path=str(path), field=field)
            return None
        grid = read_grid(path, field=field)
        k = self.intrinsics
        if field != "feature" and grid.shape[:2] != k.shape:
            raise IngestError(
                f"grid is {grid.shape[1]}x{grid.shape[0]} but intrinsics are {k.width}x{k.height}",
                path=str(path), field=field,
            )
        if grid.shape[2] != channels:
            raise IngestError(f"expected {channels} channel(s), found {grid.shape[2]}", path=str(path), field=field)
        bad = ~np.isfinite(grid).all(axis=2)
        if bad.any():
            x, y = _first_bad_pixel(bad)
            raise IngestError(f"non-finite value at pixel ({x}, {y})", path=str(path), field=field)
        return grid.astype(np.float64)

    def read_frame(self, index: int) -> FrameBundle:
        """Read and validate one frame"""
        stem = frame_stem(index)
        pose_path = self.root / f"{stem}{POSE_SUFFIX}"
        pose = parse_pose(_read_text(pose_path, "pose"), str(pose_path))

        depth = self._grid(index, DEPTH_SUFFIX, "depth", 1, required=True)[:, :, 0]
        confidence = self._grid(index, CONF_SUFFIX, "confidence", 1, required=True)[:, :, 0]
        outside = (confidence < 0.0) | (confidence > 1.0)
        if outside.any():
            x, y = _first_bad_pixel(outside)
            raise IngestError(f"confidence outside [0, 1] at pixel ({x}, {y})",
                              path=str(self.root / f"{stem}{CONF_SUFFIX}"), field="confidence")

        flow_grid = self._grid(index, FLOW_SUFFIX, "flow", 2, required=False)
        flow = FlowField(flow_grid[:, :, 0], flow_grid[:, :, 1]) if flow_grid is not None else None

        feature = None
        feat_grid = self._grid(index, FEAT_SUFFIX, "feature", 1, required=False)
        if feat_grid is not None:
            if feat_grid.size != VISUAL_DIM:
                raise IngestError(f"feature needs {VISUAL_DIM} values, found {feat_grid.size}",
                                  path=str(self.root / f"{stem}{FEAT_SUFFIX}"), field="feature")
            feature = FeatureVec(feat_grid.reshape(-1), "visual2d")

        matches = None
        matches_path = self.root / f"{stem}{MATCHES_SUFFIX}"
        if matches_path.exists():
            matches = parse_matches(_read_text(matches_path, "matches"), str(matches_path))

        return FrameBundle(
            frame_id=index,
            intrinsics=self.intrinsics,
            init_pose=pose,
            depth=DepthMap.from_values(depth),
            confidence=confidence,
            flow_prev=flow,
            visual_feat=feature,
            matches_prev=matches,
        )

    # Ground truth

    def ground_truth_poses(self) -> Optional[List[Pose]]:
        path = self.root / GT_DIR / GT_TRAJECTORY
        if not path.is_file():
            return None
        return read_tum(path)[1]

    def ground_truth_masks(self) -> Optional[List[np.ndarray]]:
        directory = self.root / GT_DIR / GT_MASK_DIR
        if not directory.is_dir():
            return None
        return [read_pgm(directory / f"{frame_stem(i)}{MASK_SUFFIX}") for i in self.frame_indices]


def ingest(root: PathLike) -> Iterator[FrameBundle]:
    """
    Lazily yield the frames of a sequence directory

    Raises:
        IngestError: naming the file and field of the first malformed input
    """
    reader = SequenceReader(root)
    logger.debug(f"Reading {len(reader)} frames from {reader.root}")
    return iter(reader)

"""
Write generated sequences in the pipeline's directory layout
"""

import logging
import os
import shutil
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from cognimap.models.frame_models import FrameBundle
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
    encode_grid,
    encode_pgm,
    format_intrinsics,
    format_matches,
    format_pose,
    frame_stem,
)
from cognimap.pipeline.ingest import GT_DIR, GT_MASK_DIR, GT_TRAJECTORY
from cognimap.posegraph.trajectory_io import format_tum
from cognimap.synth.renderer import GroundTruth

logger = logging.getLogger(__name__)


def write_sequence(frames: Sequence[FrameBundle], root: PathLike, truth: Optional[GroundTruth] = None) -> Path:
    """
    Emit frames (and optional ground truth under ``gt/``) as a sequence directory

    The directory is assembled next to ``root`` and renamed into place, so
    an existing sequence is replaced as a whole.
    """
    root = Path(root)
    root.parent.mkdir(parents=True, exist_ok=True)
    staging = root.parent / f".{root.name}.tmp-{os.getpid()}"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir()

    if frames:
        (staging / INTRINSICS_FILE).write_text(format_intrinsics(frames[0].intrinsics), encoding="utf-8")
    for frame in frames:
        stem = frame_stem(frame.frame_id)
        (staging / f"{stem}{POSE_SUFFIX}").write_text(format_pose(frame.init_pose), encoding="utf-8")
        depth = np.where(frame.depth.valid, frame.depth.values, 0.0)
        (staging / f"{stem}{DEPTH_SUFFIX}").write_bytes(encode_grid(depth))
        (staging / f"{stem}{CONF_SUFFIX}").write_bytes(encode_grid(frame.confidence))
        if frame.flow_prev is not None:
            (staging / f"{stem}{FLOW_SUFFIX}").write_bytes(encode_grid(frame.flow_prev.stacked()))
        if frame.visual_feat is not None:
            (staging / f"{stem}{FEAT_SUFFIX}").write_bytes(encode_grid(frame.visual_feat.values.reshape(1, -1)))
        if frame.matches_prev is not None:
            (staging / f"{stem}{MATCHES_SUFFIX}").write_text(format_matches(frame.matches_prev), encoding="utf-8")

    if truth is not None:
        gt = staging / GT_DIR
        (gt / GT_MASK_DIR).mkdir(parents=True)
        (gt / GT_TRAJECTORY).write_text(format_tum(truth.poses), encoding="utf-8")
        for frame, mask in zip(frames, truth.masks):
            (gt / GT_MASK_DIR / f"{frame_stem(frame.frame_id)}{MASK_SUFFIX}").write_bytes(encode_pgm(mask))

    if root.exists():
        shutil.rmtree(root)
    os.replace(staging, root)
    logger.info(f"Wrote {len(frames)} frames to {root}")
    return root

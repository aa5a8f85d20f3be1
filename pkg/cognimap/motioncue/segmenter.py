"""
Sequence segmentation: three-cue masks with flow-warp tracking in between
"""

import logging
from typing import Iterator, List, Sequence

import numpy as np

from cognimap.core.config import PipelineConfig
from cognimap.core.exceptions import DegenerateInputError, InputValueError
from cognimap.models.frame_models import FrameBundle
from cognimap.models.motion_models import DynamicMask, KeypointMatches
from cognimap.motioncue.cues import (
    flow_motion_cue,
    geometry_motion_cue,
    geometry_supported_flow,
    robust_motion_cue,
)
from cognimap.motioncue.gmm import fit_gmm, select_gmm
from cognimap.motioncue.tracking import (
    detect_new_movers,
    mask_outgrew_geometry,
    new_mover_fraction,
    propagate_mask,
    unsupported_fraction,
)

logger = logging.getLogger(__name__)


def _pair_available(frames: Sequence[FrameBundle], i: int) -> bool:
    return i + 1 < len(frames) and frames[i + 1].flow_prev is not None


def segment_pair(frame_t: FrameBundle, frame_t2: FrameBundle, config: PipelineConfig, seed: int = 0) -> DynamicMask:
    """
    Run the flow, geometry and keypoint cues on one frame pair

    The mask lives on frame_t's grid. ``frame_t2.flow_prev`` must hold the
    flow from frame_t to frame_t2. The stored ``m_flow`` keeps only the flow
    regions backed by the geometry cue (see geometry_supported_flow).
    """
    flow = frame_t2.flow_prev
    if flow is None:
        raise InputValueError(f"frame {frame_t2.frame_id} carries no flow from frame {frame_t.frame_id}")
    h, w = frame_t.shape
    valid = np.ones((h, w), dtype=bool)

    gmm_args = dict(seed=seed, max_iter=config.gmm_max_iter, tol=config.gmm_tol, cov_floor=config.gmm_cov_floor)
    try:
        if config.gmm_select_bic:
            g = select_gmm(flow, valid, k_max=config.gmm_components, **gmm_args)
        else:
            g = fit_gmm(flow, valid, k=config.gmm_components, **gmm_args)
        m_flow = flow_motion_cue(g, flow)
    except DegenerateInputError as e:
        logger.warning(f"Flow cue skipped on frame {frame_t.frame_id}: {e}")
        g = None
        m_flow = np.zeros((h, w), dtype=bool)

    geo = geometry_motion_cue(
        flow, frame_t.depth, frame_t.intrinsics, frame_t2.intrinsics,
        frame_t.init_pose, frame_t2.init_pose,
        residual_floor=config.geo_residual_floor, eps_z=config.behind_eps,
    )
    if g is not None:
        m_flow = geometry_supported_flow(g, m_flow, geo.m_geo, config.flow_geo_support)
    candidates = m_flow | geo.m_geo
    matches = frame_t2.matches_prev if frame_t2.matches_prev is not None else KeypointMatches.empty()
    robust = robust_motion_cue(
        matches, frame_t.depth, frame_t2.depth,
        frame_t.init_pose, frame_t2.init_pose,
        frame_t.intrinsics, frame_t2.intrinsics,
        candidates, m_geo=geo.m_geo,
        mag_k=config.mag_k, ang_max=config.ang_max, eps=config.static_eps,
    )
    return DynamicMask(m_flow=m_flow, m_geo=geo.m_geo, m_dyn=robust.m_dyn, tau_geo=geo.tau,
                       source="segmented", gmm=g)


def iter_masks(frames: Sequence[FrameBundle], config: PipelineConfig) -> Iterator[DynamicMask]:
    """
    Yield one dynamic mask per frame, in order

    Frame 0 is segmented in full. Later frames inherit the previous mask
    warped along the flow. The frame is segmented in full again whenever the
    geometry cue on the next pair flags enough untracked pixels, or when
    enough of the warped mask has lost geometric support. The last frame has
    no forward pair and only inherits.
    """
    if not frames:
        return
    h, w = frames[0].shape
    if not _pair_available(frames, 0):
        if len(frames) > 1:
            logger.warning("Second frame carries no flow; sequence treated as static")
        for _ in frames:
            yield DynamicMask.static(h, w)
        return

    mask = segment_pair(frames[0], frames[1], config, seed=config.seed)
    yield mask
    for i in range(1, len(frames)):
        frame = frames[i]
        previous = mask.m_dyn
        if frame.flow_prev is not None:
            propagated = propagate_mask(previous, frame.flow_prev)
        else:
            propagated = previous.copy()
        empty = np.zeros((h, w), dtype=bool)

        if not _pair_available(frames, i):
            mask = DynamicMask(m_flow=empty, m_geo=empty.copy(), m_dyn=propagated,
                               tau_geo=float("inf"), source="propagated")
            yield mask
            continue

        following = frames[i + 1]
        geo = geometry_motion_cue(
            following.flow_prev, frame.depth, frame.intrinsics, following.intrinsics,
            frame.init_pose, following.init_pose,
            residual_floor=config.geo_residual_floor, eps_z=config.behind_eps,
        )
        if detect_new_movers(geo.m_geo, propagated, config.new_mover_fraction):
            logger.debug(
                f"Frame {frame.frame_id}: {new_mover_fraction(geo.m_geo, propagated):.4f} of the image "
                "is untracked motion, re-segmenting"
            )
            mask = segment_pair(frame, following, config, seed=config.seed + i)
        elif mask_outgrew_geometry(propagated, geo.m_geo, config.stale_mask_fraction):
            logger.debug(
                f"Frame {frame.frame_id}: {unsupported_fraction(propagated, geo.m_geo):.4f} of the image "
                "is tracked without geometric support, re-segmenting"
            )
            mask = segment_pair(frame, following, config, seed=config.seed + i)
        else:
            mask = DynamicMask(m_flow=empty, m_geo=geo.m_geo, m_dyn=propagated,
                               tau_geo=geo.tau, source="propagated")
        yield mask


def segment_sequence(frames: Sequence[FrameBundle], config: PipelineConfig) -> List[DynamicMask]:
    """One dynamic mask per frame (see iter_masks)"""
    return list(iter_masks(frames, config))

"""
Flow, geometry and keypoint motion cues
"""

import logging
import math
from typing import Optional

import numpy as np
from scipy import ndimage

from cognimap.core.exceptions import DegenerateDistributionError, InputShapeError
from cognimap.geometry.camera import DEFAULT_BEHIND_EPS, backproject_pixels
from cognimap.geometry.ego_flow import ego_flow
from cognimap.models.geometry_models import DepthMap, FlowField, Intrinsics, Pose
from cognimap.models.motion_models import GeometryCue, GmmResult, KeypointMatches, RobustCue
from cognimap.motioncue.otsu import otsu_threshold

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def cluster_mean_magnitudes(g: GmmResult, flow: FlowField) -> np.ndarray:
    """Mean flow magnitude of each cluster's member pixels (inf for empty clusters)"""
    magnitude = flow.magnitude()
    means = np.full(g.effective_k, np.inf)
    for c in range(g.effective_k):
        members = g.labels == c
        if members.any():
            means[c] = float(magnitude[members].mean())
    return means


def static_cluster(g: GmmResult, flow: FlowField) -> int:
    """Cluster with the smallest mean flow magnitude; lowest index on ties"""
    means = cluster_mean_magnitudes(g, flow)
    lowest = means.min()
    return int(np.flatnonzero(means <= lowest + TIE_TOLERANCE)[0])


def flow_motion_cue(g: GmmResult, flow: FlowField) -> np.ndarray:
    """Every clustered pixel except those of the slowest cluster"""
    if g.labels.shape != flow.shape:
        raise InputShapeError(f"labels {g.labels.shape} do not match flow {flow.shape}")
    if g.effective_k <= 1:
        return np.zeros(flow.shape, dtype=bool)
    background = static_cluster(g, flow)
    return (g.labels >= 0) & (g.labels != background)


def geometry_supported_flow(g: GmmResult, m_flow: np.ndarray, m_geo: np.ndarray,
                            min_support: float = 0.5) -> np.ndarray:
    """
    Keep the flow-cue regions that the geometry cue backs up

    ``m_flow`` is split into connected regions of a single cluster. A region
    survives when at least ``min_support`` of its pixels are in ``m_geo``;
    the rest are ego-motion strata of the static scene. ``min_support == 0``
    keeps ``m_flow`` unchanged.
    """
    m_flow = np.asarray(m_flow, dtype=bool)
    m_geo = np.asarray(m_geo, dtype=bool)
    if m_flow.shape != m_geo.shape or g.labels.shape != m_flow.shape:
        raise InputShapeError(f"flow mask {m_flow.shape}, geometry mask {m_geo.shape} "
                              f"and labels {g.labels.shape} differ")
    if min_support <= 0.0 or not m_flow.any():
        return m_flow.copy()
    kept = np.zeros(m_flow.shape, dtype=bool)
    for c in np.unique(g.labels[m_flow]):
        regions, count = ndimage.label(m_flow & (g.labels == c), structure=EIGHT_CONNECTED)
        if count == 0:
            continue
        inside = regions > 0
        sizes = np.bincount(regions[inside], minlength=count + 1)
        backed = np.bincount(regions[inside], weights=m_geo[inside].astype(np.float64), minlength=count + 1)
        good = np.flatnonzero(backed[1:] >= min_support * sizes[1:]) + 1
        kept |= np.isin(regions, good)
    return kept


def geometry_motion_cue(
    flow: FlowField,
    depth: DepthMap,
    k_t: Intrinsics,
    k_t2: Intrinsics,
    e_t: Pose,
    e_t2: Pose,
    residual_floor: float = 0.0,
    eps_z: float = DEFAULT_BEHIND_EPS,
) -> GeometryCue:
    """
    Residual flow after removing camera ego-motion, thresholded with Otsu

    A residual distribution whose maximum does not exceed ``residual_floor``
    is treated like a degenerate one: the frame is all-static.
    """
    if flow.shape != depth.shape:
        raise InputShapeError(f"flow {flow.shape} and depth {depth.shape} differ")
    expected, valid = ego_flow(depth, k_t, k_t2, e_t, e_t2, eps_z)
    residual = np.where(valid, np.hypot(flow.u - expected.u, flow.v - expected.v), 0.0)

    samples = residual[valid]
    try:
        if samples.size and samples.max() <= residual_floor:
            raise DegenerateDistributionError("residual flow below floor")
        tau = otsu_threshold(samples)
    except DegenerateDistributionError as e:
        logger.debug(f"Geometry cue degenerate, frame treated as static: {e}")
        return GeometryCue(residual=residual, m_geo=np.zeros(flow.shape, dtype=bool),
                           tau=math.inf, valid=valid, degenerate=True)

    m_geo = valid & (residual > tau)
    return GeometryCue(residual=residual, m_geo=m_geo, tau=tau, valid=valid)


def _lift_matches(pixels: np.ndarray, depth: DepthMap, k: Intrinsics, pose: Pose):
    cols = np.rint(pixels[:, 0]).astype(np.int64)
    rows = np.rint(pixels[:, 1]).astype(np.int64)
    inside = (cols >= 0) & (cols < k.width) & (rows >= 0) & (rows < k.height)
    cols_c = np.clip(cols, 0, k.width - 1)
    rows_c = np.clip(rows, 0, k.height - 1)
    ok = inside & depth.valid[rows_c, cols_c]
    z = np.where(ok, depth.values[rows_c, cols_c], 1.0)
    cam = backproject_pixels(pixels[:, 0], pixels[:, 1], z, k)
    world = (cam - pose.translation) @ pose.rotation
    return world, ok, rows_c, cols_c


def robust_motion_cue(
    matches: KeypointMatches,
    depth_t: DepthMap,
    depth_t2: DepthMap,
    e_t: Pose,
    e_t2: Pose,
    k_t: Intrinsics,
    k_t2: Intrinsics,
    candidates: np.ndarray,
    m_geo: Optional[np.ndarray] = None,
    mag_k: float = 3.0,
    ang_max: float = math.radians(45.0),
    eps: float = 1e-3,
    min_matches: int = 4,
) -> RobustCue:
    """
    Keep the candidate regions that contain keypoints moving unlike the static scene

    Match endpoints are lifted to world coordinates. The mean displacement and
    the spread of displacement norms of keypoints outside the candidates form
    the static reference. A candidate keypoint is dynamic when its displacement
    deviates from the mean by more than ``max(mag_k * sigma, eps)`` or, when
    both it and the mean exceed ``eps``, points more than ``ang_max`` away.

    Args:
        matches: Correspondences from frame t to frame t2
        depth_t, depth_t2: Depth maps of both frames
        e_t, e_t2: World-to-camera poses
        k_t, k_t2: Intrinsics
        candidates: Union of the flow and geometry cue masks (frame t grid)
        m_geo: Mask returned when no static reference exists
        mag_k, ang_max, eps: Deviation thresholds

    Returns:
        RobustCue with m_dyn made of whole connected candidate components
    """
    candidates = np.asarray(candidates, dtype=bool)
    if candidates.shape != depth_t.shape:
        raise InputShapeError(f"candidate mask {candidates.shape} does not match depth {depth_t.shape}")
    fallback_mask = (np.asarray(m_geo, dtype=bool) if m_geo is not None
                     else np.zeros(candidates.shape, dtype=bool))
    flags = np.zeros(len(matches), dtype=bool)

    def fallback(reason: str, static_count: int) -> RobustCue:
        logger.warning(f"Robust motion cue fell back to the geometry mask: {reason}")
        return RobustCue(m_dyn=fallback_mask.copy(), dynamic_flags=flags,
                         static_reference_count=static_count, fallback=True)

    if len(matches) == 0:
        return fallback("no keypoint matches", 0)

    w_t, ok_t, rows, cols = _lift_matches(matches.pixels_t, depth_t, k_t, e_t)
    w_t2, ok_t2, _, _ = _lift_matches(matches.pixels_t2, depth_t2, k_t2, e_t2)
    ok = ok_t & ok_t2
    if np.count_nonzero(ok) < min_matches:
        return fallback(f"only {int(np.count_nonzero(ok))} matches with valid depth", 0)

    displacement = w_t2 - w_t
    in_candidate = ok & candidates[rows, cols]
    static_ref = ok & ~in_candidate
    n_static = int(np.count_nonzero(static_ref))
    if n_static == 0:
        return fallback("no static reference keypoints", 0)

    mean_disp = displacement[static_ref].mean(axis=0)
    sigma = float(np.linalg.norm(displacement[static_ref], axis=1).std())
    deviation = np.linalg.norm(displacement - mean_disp, axis=1)
    dynamic = deviation > max(mag_k * sigma, eps)

    mean_norm = float(np.linalg.norm(mean_disp))
    if mean_norm > eps:
        norms = np.linalg.norm(displacement, axis=1)
        moving = norms > eps
        cosine = np.zeros(len(matches))
        cosine[moving] = displacement[moving] @ mean_disp / (norms[moving] * mean_norm)
        angle = np.arccos(np.clip(cosine, -1.0, 1.0))
        dynamic |= moving & (angle > ang_max)

    flags = in_candidate & dynamic

    components, _ = ndimage.label(candidates, structure=EIGHT_CONNECTED)
    hit = np.unique(components[rows[flags], cols[flags]])
    hit = hit[hit > 0]
    m_dyn = np.isin(components, hit) if hit.size else np.zeros(candidates.shape, dtype=bool)
    return RobustCue(m_dyn=m_dyn, dynamic_flags=flags, static_reference_count=n_static)

"""
Landmark selection, association and memory injection

Candidates are static, confident pixels with valid depth lifted into the
world with their frame's initial pose. Association clusters them greedily
into landmarks; accepted recalls add stored points as extra landmarks with
down-weighted observations.
"""

import logging
import math
from collections import defaultdict
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from cognimap.core.config import PipelineConfig
from cognimap.core.exceptions import ContractViolationError, InputShapeError
from cognimap.geometry.camera import backproject_pixels, in_frame, project, round_pixels
from cognimap.geometry.se3 import se3_inverse
from cognimap.icp.nn_index import NearestNeighborIndex
from cognimap.models.frame_models import FrameBundle
from cognimap.models.geometry_models import Intrinsics, Pose
from cognimap.models.graph_models import (
    AssociationConfig,
    FactorGraphProblem,
    Landmark,
    LandmarkCandidate,
    Observation,
)
from cognimap.models.memory_models import AlignmentResult, MemoryMap, PointCloud
from cognimap.models.motion_models import DynamicMask

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 2

# frame, pixel, measured depth
_Member = Tuple[int, np.ndarray, Optional[float]]


def grid_axis(size: int, step: int) -> np.ndarray:
    """Lattice coordinates ``step // 2 + i * step`` for ``i < size // step``"""
    return np.arange(step // 2, (size // step) * step, step, dtype=np.int64)


def _check_aligned(frames: Sequence[FrameBundle], masks: Sequence[DynamicMask]) -> None:
    if len(frames) != len(masks):
        raise InputShapeError(f"{len(frames)} frames but {len(masks)} masks")
    for frame, mask in zip(frames, masks):
        if mask.m_dyn.shape != frame.shape:
            raise InputShapeError(f"frame {frame.frame_id}: mask {mask.m_dyn.shape} does not match {frame.shape}")


def _usable(frame: FrameBundle, mask: DynamicMask, conf_min: float) -> np.ndarray:
    return ~mask.m_dyn & (frame.confidence >= conf_min) & frame.depth.valid


def _lift(frame: FrameBundle, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """World points of (sub)pixel positions and the depths they were lifted with (rounded pixel)"""
    cols, rows = round_pixels(pixels)
    depth = frame.depth.values[rows, cols].astype(np.float64)
    cam = backproject_pixels(pixels[:, 0], pixels[:, 1], depth, frame.intrinsics)
    pose = frame.init_pose
    return (cam - pose.translation) @ pose.rotation, depth


def select_landmarks(
    frames: Sequence[FrameBundle],
    masks: Sequence[DynamicMask],
    conf_min: float,
    grid_step: int,
) -> List[LandmarkCandidate]:
    """
    Sample landmark candidates on a regular pixel lattice

    Frames without a single qualifying pixel are logged and contribute no
    candidates.
    """
    _check_aligned(frames, masks)
    candidates: List[LandmarkCandidate] = []
    for i, (frame, mask) in enumerate(zip(frames, masks)):
        height, width = frame.shape
        ys, xs = np.meshgrid(grid_axis(height, grid_step), grid_axis(width, grid_step), indexing="ij")
        keep = _usable(frame, mask, conf_min)[ys, xs]
        pixels = np.stack([xs[keep], ys[keep]], axis=1).astype(np.float64)
        if pixels.shape[0] == 0:
            logger.warning(f"Frame {frame.frame_id} has no landmark candidates; only prior and motion factors apply")
            continue
        points, depths = _lift(frame, pixels)
        for pixel, point, depth in zip(pixels, points, depths):
            candidates.append(LandmarkCandidate(frame=i, pixel=pixel, point=point, depth=float(depth)))
    return candidates


def track_candidates(
    frames: Sequence[FrameBundle],
    masks: Sequence[DynamicMask],
    conf_min: float,
    grid_step: int,
    track_length: int,
) -> List[LandmarkCandidate]:
    """
    Lattice candidates advected through the flow into later frames

    A track continues while it stays inside the image on a usable pixel and
    has fewer than ``track_length`` observations. Lattice cells left empty
    by the surviving tracks seed new tracks. A frame without flow from its
    predecessor ends every track.
    """
    _check_aligned(frames, masks)
    candidates: List[LandmarkCandidate] = []
    positions = np.zeros((0, 2))
    ids = np.zeros(0, dtype=np.int64)
    ages = np.zeros(0, dtype=np.int64)
    next_id = 0

    for i, (frame, mask) in enumerate(zip(frames, masks)):
        k = frame.intrinsics
        usable = _usable(frame, mask, conf_min)

        if positions.shape[0] and frame.flow_prev is not None:
            coords = [positions[:, 1], positions[:, 0]]
            du = map_coordinates(frame.flow_prev.u, coords, order=1, mode="nearest")
            dv = map_coordinates(frame.flow_prev.v, coords, order=1, mode="nearest")
            positions = positions + np.stack([du, dv], axis=1)
            alive = in_frame(positions, k) & (ages < track_length)
            cols, rows = round_pixels(positions)
            cols = np.clip(cols, 0, k.width - 1)
            rows = np.clip(rows, 0, k.height - 1)
            alive &= usable[rows, cols]
            positions, ids, ages = positions[alive], ids[alive], ages[alive] + 1
        else:
            positions, ids, ages = np.zeros((0, 2)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)

        occupied = set()
        if positions.shape[0]:
            cols, rows = round_pixels(positions)
            occupied = set(zip((rows // grid_step).tolist(), (cols // grid_step).tolist()))
        ys, xs = np.meshgrid(grid_axis(k.height, grid_step), grid_axis(k.width, grid_step), indexing="ij")
        keep = usable[ys, xs]
        seeds = [(x, y) for x, y in zip(xs[keep].tolist(), ys[keep].tolist())
                 if (y // grid_step, x // grid_step) not in occupied]
        if seeds:
            positions = np.vstack([positions, np.asarray(seeds, dtype=np.float64)])
            ids = np.concatenate([ids, np.arange(next_id, next_id + len(seeds))])
            ages = np.concatenate([ages, np.ones(len(seeds), dtype=np.int64)])
            next_id += len(seeds)

        if positions.shape[0] == 0:
            logger.warning(f"Frame {frame.frame_id} has no landmark candidates; only prior and motion factors apply")
            continue
        points, depths = _lift(frame, positions)
        for pixel, point, depth, track in zip(positions, points, depths, ids):
            candidates.append(LandmarkCandidate(frame=i, pixel=pixel.copy(), point=point, track_id=int(track),
                                                depth=float(depth)))
    return candidates


def association_config(config: PipelineConfig, candidates: Sequence[LandmarkCandidate]) -> AssociationConfig:
    """Association radius for a candidate set, scaled by its extent"""
    if candidates:
        d_scene = PointCloud(np.array([c.point for c in candidates])).diameter()
    else:
        d_scene = 0.0
    return AssociationConfig(tau_min=config.tau_min, alpha_assoc=config.alpha_assoc, d_scene=d_scene)


class _SpatialHash:
    """Landmark ids bucketed by cubic cells of the association radius"""

    def __init__(self, cell: float):
        self.cell = cell
        self._cells: Dict[Tuple[int, int, int], set] = defaultdict(set)
        self._key_of: Dict[int, Tuple[int, int, int]] = {}

    def _key(self, point: np.ndarray) -> Tuple[int, int, int]:
        return tuple(np.floor(point / self.cell).astype(np.int64).tolist())

    def place(self, index: int, point: np.ndarray) -> None:
        key = self._key(point)
        old = self._key_of.get(index)
        if old == key:
            return
        if old is not None:
            self._cells[old].discard(index)
        self._cells[key].add(index)
        self._key_of[index] = key

    def near(self, point: np.ndarray) -> List[int]:
        cx, cy, cz = self._key(point)
        found: List[int] = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    found.extend(self._cells.get((cx + dx, cy + dy, cz + dz), ()))
        return sorted(found)


def _reprojects_within(point: np.ndarray, members: List[_Member], poses: Sequence[Pose],
                       intrinsics: Sequence[Intrinsics], gate: float) -> bool:
    for frame, pixel, _ in members:
        pixels, behind = project(poses[frame].apply(point), intrinsics[frame])
        if behind or np.linalg.norm(pixels - pixel) > gate:
            return False
    return True


def associate_landmarks(
    candidates: Sequence[LandmarkCandidate],
    cfg: AssociationConfig,
    poses: Optional[Sequence[Pose]] = None,
    intrinsics: Optional[Sequence[Intrinsics]] = None,
    huber_delta: float = 2.0,
    sigma_proj: float = 1.0,
    sigma_depth_rel: Optional[float] = None,
) -> Tuple[List[Landmark], List[Observation]]:
    """
    Greedy clustering of candidates into landmarks

    A candidate whose track already has a landmark joins it. Otherwise it
    joins the nearest landmark not yet observed in its frame when the world
    distance is below ``cfg.tau_dist`` and, given poses, the candidate
    point reprojects within ``2 * huber_delta`` pixels of every existing
    observation of that landmark. Anything else spawns a landmark. Landmarks
    seen fewer than twice are dropped.

    With ``sigma_depth_rel`` set, every observation whose candidate carries
    a depth also measures it, with standard deviation ``sigma_depth_rel *
    depth``.

    Returns:
        (landmarks, observations) with landmark ids 0..M-1
    """
    tau = cfg.tau_dist
    gate = 2.0 * huber_delta
    check_reprojection = poses is not None and intrinsics is not None
    index = _SpatialHash(tau)
    landmarks: List[Landmark] = []
    members: List[List[_Member]] = []
    by_track: Dict[int, int] = {}

    for cand in candidates:
        target = None
        if cand.track_id is not None and cand.track_id in by_track:
            j = by_track[cand.track_id]
            if all(m[0] != cand.frame for m in members[j]):
                target = j
        if target is None:
            best, best_dist = None, tau
            for j in index.near(cand.point):
                if any(m[0] == cand.frame for m in members[j]):
                    continue
                dist = float(np.linalg.norm(landmarks[j].position - cand.point))
                if dist < best_dist:
                    best, best_dist = j, dist
            if best is not None and (not check_reprojection
                                     or _reprojects_within(cand.point, members[best], poses, intrinsics, gate)):
                target = best

        if target is None:
            target = len(landmarks)
            landmarks.append(Landmark(id=target, position=cand.point, track_id=cand.track_id))
            members.append([(cand.frame, cand.pixel, cand.depth)])
        else:
            landmarks[target].absorb(cand.point)
            members[target].append((cand.frame, cand.pixel, cand.depth))
        index.place(target, landmarks[target].position)
        if cand.track_id is not None and cand.track_id not in by_track:
            by_track[cand.track_id] = target

    sigma = np.eye(2) * sigma_proj ** 2
    kept: List[Landmark] = []
    observations: List[Observation] = []
    for lm, seen in zip(landmarks, members):
        if len(seen) < MIN_OBSERVATIONS:
            continue
        lm.id = len(kept)
        kept.append(lm)
        for frame, pixel, depth in seen:
            if sigma_depth_rel is not None and depth is not None:
                observations.append(Observation(frame=frame, landmark=lm.id, pixel=pixel, sigma=sigma,
                                                depth=depth, depth_sigma=sigma_depth_rel * depth))
            else:
                observations.append(Observation(frame=frame, landmark=lm.id, pixel=pixel, sigma=sigma))
    logger.debug(f"Associated {len(candidates)} candidates into {len(kept)} landmarks (tau {tau:.4g})")
    return kept, observations


def inject_memory_landmarks(
    problem: FactorGraphProblem,
    recalled: MemoryMap,
    alignment: AlignmentResult,
    tau_dist: float,
    alpha_mem: Optional[float] = None,
    fixed: bool = False,
) -> FactorGraphProblem:
    """
    Add stored points of a recalled map as landmarks

    Stored points are moved into the current frame with the inverse of the
    accepted alignment. Every fresh landmark with a stored point within
    ``tau_dist`` lends its observations to a memory landmark at that point,
    with covariances (depth variances included) scaled by ``alpha_mem``; a
    stored point claimed twice goes to the nearer landmark. Memory landmarks with a single observation,
    or all of them when ``fixed`` is set, are held constant.

    Raises:
        ContractViolationError: the alignment was not accepted
    """
    if not alignment.accepted:
        raise ContractViolationError("memory landmarks need an accepted alignment")
    alpha = problem.alpha_mem if alpha_mem is None else alpha_mem
    fresh = [lm for lm in problem.landmarks if not lm.from_memory]
    if not fresh or len(recalled.static_cloud) == 0:
        return replace(problem, alpha_mem=alpha)

    stored = recalled.static_cloud.transformed(se3_inverse(alignment.transform))
    tree = NearestNeighborIndex(stored)
    distances, nearest = tree.query(np.array([lm.position for lm in fresh]), max_distance=tau_dist)

    claims: Dict[int, Tuple[float, int]] = {}
    for i, (dist, point) in enumerate(zip(distances, nearest)):
        if point < 0:
            continue
        if point not in claims or dist < claims[point][0]:
            claims[int(point)] = (float(dist), i)

    by_landmark: Dict[int, List[Observation]] = defaultdict(list)
    for obs in problem.observations:
        by_landmark[obs.landmark].append(obs)

    landmarks = list(problem.landmarks)
    observations = list(problem.observations)
    next_id = problem.next_landmark_id()
    for point in sorted(claims, key=lambda p: claims[p][1]):
        source = fresh[claims[point][1]]
        copied = [Observation(frame=o.frame, landmark=next_id, pixel=o.pixel, sigma=o.sigma * alpha,
                              depth=o.depth,
                              depth_sigma=o.depth_sigma * math.sqrt(alpha) if o.has_depth else None)
                  for o in by_landmark[source.id]]
        landmarks.append(Landmark(
            id=next_id,
            position=stored.points[point],
            from_memory=True,
            fixed=fixed or len(copied) < MIN_OBSERVATIONS,
        ))
        observations.extend(copied)
        next_id += 1

    logger.info(f"Injected {len(claims)} memory landmarks from map {recalled.map_id}")
    return replace(problem, landmarks=landmarks, observations=observations, alpha_mem=alpha)


def build_problem(
    frames: Sequence[FrameBundle],
    landmarks: List[Landmark],
    observations: List[Observation],
    config: PipelineConfig,
) -> FactorGraphProblem:
    """Factor graph over the frames' initial poses with the configured covariances"""
    poses = [frame.init_pose for frame in frames]
    sigma_motion = np.diag([config.sigma_motion_trans] * 3 + [config.sigma_motion_rot] * 3)
    return FactorGraphProblem(
        poses=list(poses),
        init_poses=list(poses),
        intrinsics=[frame.intrinsics for frame in frames],
        landmarks=landmarks,
        observations=observations,
        sigma_prior=np.eye(6) * config.sigma_prior,
        sigma_motion=sigma_motion,
        huber_delta=config.huber_delta,
        alpha_mem=config.alpha_mem,
    )

"""
Ray-cast renderer producing frame priors and exact ground truth

Every pixel ray is intersected with the room (from inside), the static
boxes and the movers (from outside); the nearest hit wins. Depth is the
camera-frame z of the hit. Flow and keypoint matches follow each hit point
through the next frame's poses analytically.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from cognimap.core.exceptions import SceneGenerationError
from cognimap.geometry.camera import in_frame, pixel_grid, project
from cognimap.membank.voxel import voxel_downsample
from cognimap.models.frame_models import FrameBundle
from cognimap.models.geometry_models import DepthMap, FlowField, Intrinsics, Pose
from cognimap.models.memory_models import PointCloud
from cognimap.models.motion_models import KeypointMatches
from cognimap.synth.features import toy_visual_feature
from cognimap.synth.noise import perturb_poses
from cognimap.synth.scene import SceneConfig

logger = logging.getLogger(__name__)

NOISE_LATTICE = 32
CHECKER_SIZE = 0.5
NOISE_SCALE = 0.2
STATIC_CLOUD_STRIDE = 4
STATIC_CLOUD_VOXEL = 0.05
VISIBILITY_TOL = 1e-6
_TINY = 1e-12


@dataclass(frozen=True)
class GroundTruth:
    """
    Exact per-frame truth

    ``flow[i]`` and ``matches[i]`` go from frame i-1 to frame i (None for
    frame 0), like the priors they are compared with.
    """
    poses: List[Pose]
    depth: List[DepthMap]
    flow: List[Optional[FlowField]]
    masks: List[np.ndarray]
    matches: List[Optional[KeypointMatches]]
    images: List[np.ndarray]
    static_cloud: PointCloud


@dataclass
class _Hits:
    depth: np.ndarray       # ray parameter, equal to camera z
    world: np.ndarray       # N x 3
    local: np.ndarray       # N x 3, object frame for mover hits, world otherwise
    mover: np.ndarray       # mover index or -1
    surface: np.ndarray     # texture id


def _safe(directions: np.ndarray) -> np.ndarray:
    return np.where(np.abs(directions) < _TINY, np.where(directions < 0, -_TINY, _TINY), directions)


def _slab(origins: np.ndarray, directions: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    inv = 1.0 / _safe(directions)
    t1 = (lo - origins) * inv
    t2 = (hi - origins) * inv
    return np.minimum(t1, t2), np.maximum(t1, t2)


def _face(axis: np.ndarray, positive_side: np.ndarray) -> np.ndarray:
    return 2 * axis + positive_side.astype(np.int64)


class SceneRenderer:
    """Casts rays into one SceneConfig"""

    def __init__(self, cfg: SceneConfig):
        self.cfg = cfg
        n_surfaces = 6 * (1 + len(cfg.boxes) + len(cfg.movers))
        rng = np.random.default_rng([cfg.texture, 7])
        self._albedo = rng.uniform(0.2, 0.8, n_surfaces)
        self._phase = rng.uniform(0.0, CHECKER_SIZE, (n_surfaces, 2))
        self._noise = rng.random((n_surfaces, NOISE_LATTICE, NOISE_LATTICE))

    # Geometry

    def check_cameras(self) -> None:
        cfg = self.cfg
        for i, pose in enumerate(cfg.camera_poses):
            c = pose.center
            if np.any(np.abs(c) >= cfg.room_half):
                raise SceneGenerationError(f"camera {i} is outside the room")
            for b, box in enumerate(cfg.boxes):
                if box.contains(c):
                    raise SceneGenerationError(f"camera {i} is inside static box {b}")
            for m, mover in enumerate(cfg.movers):
                if mover.contains(c, i):
                    raise SceneGenerationError(f"camera {i} is inside mover {m}")

    def cast(self, origin: np.ndarray, directions: np.ndarray, frame: int) -> _Hits:
        """Nearest hit of rays ``origin + t * directions`` at frame ``frame``"""
        cfg = self.cfg
        n = directions.shape[0]
        origins = np.broadcast_to(origin, (n, 3))

        _, t_far = _slab(origins, directions, -cfg.room_half, cfg.room_half)
        depth = t_far.min(axis=1)
        axis = t_far.argmin(axis=1)
        rows = np.arange(n)
        surface = _face(axis, directions[rows, axis] > 0)
        mover = np.full(n, -1, dtype=np.int64)
        local = origins + depth[:, None] * directions

        for b, box in enumerate(cfg.boxes):
            t_near, t_far = _slab(origins, directions, box.lo, box.hi)
            enter = t_near.max(axis=1)
            hit = (enter <= t_far.min(axis=1)) & (enter > _TINY) & (enter < depth)
            if not hit.any():
                continue
            axis = t_near.argmax(axis=1)
            depth = np.where(hit, enter, depth)
            faces = 6 * (1 + b) + _face(axis, directions[rows, axis] < 0)
            surface = np.where(hit, faces, surface)
            local = np.where(hit[:, None], origins + enter[:, None] * directions, local)

        for m, mover_cfg in enumerate(cfg.movers):
            pose = mover_cfg.poses[frame]
            o_obj = (origins - pose.translation) @ pose.rotation
            d_obj = directions @ pose.rotation
            t_near, t_far = _slab(o_obj, d_obj, -mover_cfg.half_size, mover_cfg.half_size)
            enter = t_near.max(axis=1)
            hit = (enter <= t_far.min(axis=1)) & (enter > _TINY) & (enter < depth)
            if not hit.any():
                continue
            axis = t_near.argmax(axis=1)
            depth = np.where(hit, enter, depth)
            faces = 6 * (1 + len(cfg.boxes) + m) + _face(axis, d_obj[rows, axis] < 0)
            surface = np.where(hit, faces, surface)
            mover = np.where(hit, m, mover)
            local = np.where(hit[:, None], o_obj + enter[:, None] * d_obj, local)

        world = origins + depth[:, None] * directions
        return _Hits(depth=depth, world=world, local=local, mover=mover, surface=surface)

    def rays(self, pose: Pose, k: Intrinsics, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """World origin and directions (camera z component 1) through pixel positions"""
        cam = np.stack([(pixels[:, 0] - k.cx) / k.fx, (pixels[:, 1] - k.cy) / k.fy,
                        np.ones(pixels.shape[0])], axis=1)
        return pose.center, cam @ pose.rotation

    def cast_pixels(self, frame: int, pixels: np.ndarray) -> _Hits:
        origin, directions = self.rays(self.cfg.camera_poses[frame], self.cfg.intrinsics, pixels)
        return self.cast(origin, directions, frame)

    def advance(self, hits: _Hits, frame: int) -> np.ndarray:
        """World positions of the hit points at ``frame``"""
        out = hits.world.copy()
        for m, mover in enumerate(self.cfg.movers):
            sel = hits.mover == m
            if sel.any():
                out[sel] = mover.poses[frame].apply(hits.local[sel])
        return out

    # Texture

    def shade(self, hits: _Hits) -> np.ndarray:
        axis = (hits.surface % 6) // 2
        keep = np.ones((hits.surface.shape[0], 3), dtype=bool)
        keep[np.arange(keep.shape[0]), axis] = False
        uv = hits.local[keep].reshape(-1, 2) + self._phase[hits.surface]
        checker = (np.floor(uv[:, 0] / CHECKER_SIZE) + np.floor(uv[:, 1] / CHECKER_SIZE)) % 2

        g = uv / NOISE_SCALE
        base = np.floor(g)
        frac = g - base
        frac = frac * frac * (3.0 - 2.0 * frac)
        i0 = np.mod(base, NOISE_LATTICE).astype(np.int64)
        i1 = np.mod(i0 + 1, NOISE_LATTICE)
        s = hits.surface
        n00 = self._noise[s, i0[:, 0], i0[:, 1]]
        n10 = self._noise[s, i1[:, 0], i0[:, 1]]
        n01 = self._noise[s, i0[:, 0], i1[:, 1]]
        n11 = self._noise[s, i1[:, 0], i1[:, 1]]
        noise = (n00 * (1 - frac[:, 0]) * (1 - frac[:, 1]) + n10 * frac[:, 0] * (1 - frac[:, 1])
                 + n01 * (1 - frac[:, 0]) * frac[:, 1] + n11 * frac[:, 0] * frac[:, 1])
        return np.clip(0.5 * self._albedo[hits.surface] + 0.2 * checker + 0.3 * noise, 0.0, 1.0)


def _project_into(points: np.ndarray, pose: Pose, k: Intrinsics) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    cam = pose.apply(points)
    pixels, behind = project(cam, k)
    return pixels, behind, cam[:, 2]


def _matches(renderer: SceneRenderer, frame: int, rng: np.random.Generator) -> KeypointMatches:
    """Exact correspondences from a jittered lattice of frame-1 into frame"""
    cfg = renderer.cfg
    k = cfg.intrinsics
    step = cfg.match_step
    ys, xs = np.mgrid[step // 2:k.height:step, step // 2:k.width:step]
    lattice = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    jitter = rng.uniform(-0.25 * step, 0.25 * step, lattice.shape)
    source = np.clip(lattice + jitter, 0.0, [k.width - 1, k.height - 1])

    hits = renderer.cast_pixels(frame - 1, source)
    moved = renderer.advance(hits, frame)
    target, behind, z = _project_into(moved, cfg.camera_poses[frame], k)
    keep = ~behind & in_frame(np.where(behind[:, None], 0.0, target), k)
    if keep.any():
        seen = renderer.cast_pixels(frame, target[keep])
        visible = np.abs(seen.depth - z[keep]) <= VISIBILITY_TOL * np.maximum(1.0, z[keep])
        idx = np.flatnonzero(keep)
        keep[idx[~visible]] = False
    return KeypointMatches(source[keep], target[keep], np.ones(int(np.count_nonzero(keep))))


def _as_float32(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def generate(cfg: SceneConfig) -> Tuple[List[FrameBundle], GroundTruth]:
    """
    Render a sequence

    Ground truth is exact float64. Priors are float32 values (as they would
    be read back from disk) with the configured noise applied after the
    truth is captured. The same config always yields identical output.

    Raises:
        SceneGenerationError: a camera sits outside the room or inside an object
    """
    renderer = SceneRenderer(cfg)
    renderer.check_cameras()
    k = cfg.intrinsics
    h, w = k.height, k.width
    xs, ys = pixel_grid(h, w)
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1)

    depths, masks, images, flows, matches = [], [], [], [], []
    static_points = []
    hits_prev: Optional[_Hits] = None
    match_rng = np.random.default_rng([cfg.seed, 2])
    for i in range(cfg.n_frames):
        hits = renderer.cast_pixels(i, grid)
        depths.append(DepthMap.from_values(hits.depth.reshape(h, w)))
        mask = (hits.mover >= 0).reshape(h, w)
        masks.append(mask)
        images.append(renderer.shade(hits).reshape(h, w))
        if i % STATIC_CLOUD_STRIDE == 0:
            static_points.append(hits.world[hits.mover < 0])

        if hits_prev is None:
            flows.append(None)
            matches.append(None)
        else:
            moved = renderer.advance(hits_prev, i)
            target, behind, _ = _project_into(moved, cfg.camera_poses[i], k)
            flow = np.where(behind[:, None], 0.0, target - grid)
            flows.append(FlowField(flow[:, 0].reshape(h, w), flow[:, 1].reshape(h, w)))
            matches.append(_matches(renderer, i, match_rng))
        hits_prev = hits

    static_cloud = voxel_downsample(PointCloud(np.concatenate(static_points)), STATIC_CLOUD_VOXEL)
    truth = GroundTruth(
        poses=list(cfg.camera_poses), depth=depths, flow=flows, masks=masks,
        matches=matches, images=images, static_cloud=static_cloud,
    )
    frames = _priors(cfg, truth)
    logger.debug(f"Generated scene {cfg.seed}: {cfg.n_frames} frames at {w}x{h}, {len(cfg.movers)} movers")
    return frames, truth


def _priors(cfg: SceneConfig, truth: GroundTruth) -> List[FrameBundle]:
    k = cfg.intrinsics
    rng = np.random.default_rng([cfg.seed, 3])
    poses = perturb_poses(truth.poses, cfg.pose_sigma_rot, cfg.pose_sigma_trans, seed=cfg.seed, keep_first=True)
    frames = []
    for i in range(cfg.n_frames):
        depth = truth.depth[i].values * (1.0 + cfg.depth_sigma * rng.standard_normal(k.shape))
        dropped = rng.random(k.shape) < cfg.depth_dropout
        depth = np.where(dropped, 0.0, depth)
        confidence = np.where(dropped, 0.0, 1.0)

        flow = None
        if truth.flow[i] is not None:
            noise = cfg.flow_sigma * rng.standard_normal((2,) + k.shape)
            flow = FlowField(_as_float32(truth.flow[i].u + noise[0]), _as_float32(truth.flow[i].v + noise[1]))

        match = truth.matches[i]
        if match is not None and cfg.flow_sigma > 0:
            jitter = cfg.flow_sigma * rng.standard_normal(match.pixels_t2.shape)
            match = KeypointMatches(match.pixels_t, match.pixels_t2 + jitter, match.scores)

        frames.append(FrameBundle(
            frame_id=i,
            intrinsics=k,
            init_pose=poses[i],
            depth=DepthMap.from_values(_as_float32(depth)),
            confidence=_as_float32(confidence),
            flow_prev=flow,
            visual_feat=toy_visual_feature(truth.images[i], ~truth.masks[i]),
            matches_prev=match,
        ))
    return frames

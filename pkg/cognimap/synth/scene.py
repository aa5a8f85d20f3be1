"""
Synthetic scene descriptions

A scene is a closed, textured room with static boxes, rigid box movers and a
camera trajectory. Everything is expressed in one world frame; poses follow
the package convention (world to camera for cameras, object to world for
movers).
"""

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from cognimap.core.exceptions import SceneGenerationError
from cognimap.geometry.se3 import so3_exp
from cognimap.models.geometry_models import Intrinsics, Pose

DEFAULT_WIDTH = 128
DEFAULT_HEIGHT = 96
DEFAULT_FOCAL = 100.0
MAX_PLACEMENT_ATTEMPTS = 200
BOX_RING = 3.0


@dataclass(frozen=True)
class Box:
    """Axis-aligned static box"""
    center: np.ndarray
    half_size: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "half_size", np.asarray(self.half_size, dtype=np.float64).reshape(3))
        if np.any(self.half_size <= 0):
            raise SceneGenerationError("box half sizes must be positive")

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_size

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_size

    def contains(self, point: np.ndarray) -> bool:
        return bool(np.all(np.abs(np.asarray(point) - self.center) < self.half_size))


@dataclass(frozen=True)
class Mover:
    """Box moving rigidly; ``poses[i]`` maps object coordinates to the world at frame i"""
    half_size: np.ndarray
    poses: Tuple[Pose, ...]

    def __post_init__(self):
        object.__setattr__(self, "half_size", np.asarray(self.half_size, dtype=np.float64).reshape(3))
        object.__setattr__(self, "poses", tuple(self.poses))
        if np.any(self.half_size <= 0):
            raise SceneGenerationError("mover half sizes must be positive")

    def contains(self, point: np.ndarray, frame: int) -> bool:
        pose = self.poses[frame]
        local = pose.rotation.T @ (np.asarray(point) - pose.translation)
        return bool(np.all(np.abs(local) < self.half_size))


@dataclass(frozen=True)
class SceneConfig:
    """
    Everything that determines a generated sequence

    Noise fields perturb the priors only; ground truth is captured first.
    ``depth_sigma`` is relative, pose sigmas are radians and metres per
    axis, ``flow_sigma`` is pixels and ``depth_dropout`` is the fraction of
    pixels reported without depth.
    """
    seed: int
    intrinsics: Intrinsics
    camera_poses: Tuple[Pose, ...]
    room_half: np.ndarray
    boxes: Tuple[Box, ...] = ()
    movers: Tuple[Mover, ...] = ()
    depth_sigma: float = 0.0
    pose_sigma_rot: float = 0.0
    pose_sigma_trans: float = 0.0
    flow_sigma: float = 0.0
    depth_dropout: float = 0.0
    match_step: int = 8
    texture_seed: Optional[int] = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "camera_poses", tuple(self.camera_poses))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "movers", tuple(self.movers))
        object.__setattr__(self, "room_half", np.asarray(self.room_half, dtype=np.float64).reshape(3))
        if not self.camera_poses:
            raise SceneGenerationError("a scene needs at least one camera pose")
        for i, pose in enumerate(self.camera_poses):
            if not pose.is_valid():
                raise SceneGenerationError(f"camera pose {i} is not a rigid transform")
        for m, mover in enumerate(self.movers):
            if len(mover.poses) != len(self.camera_poses):
                raise SceneGenerationError(
                    f"mover {m} has {len(mover.poses)} poses for {len(self.camera_poses)} frames"
                )
        if min(self.depth_sigma, self.pose_sigma_rot, self.pose_sigma_trans, self.flow_sigma) < 0:
            raise SceneGenerationError("noise levels must be non-negative")
        if not 0.0 <= self.depth_dropout < 1.0:
            raise SceneGenerationError("depth_dropout must lie in [0, 1)")
        if self.match_step < 1:
            raise SceneGenerationError("match_step must be positive")

    @property
    def n_frames(self) -> int:
        return len(self.camera_poses)

    @property
    def texture(self) -> int:
        return self.seed if self.texture_seed is None else self.texture_seed

    def diameter(self) -> float:
        """Diagonal of the room"""
        return float(2.0 * np.linalg.norm(self.room_half))

    def with_noise(self, **noise) -> "SceneConfig":
        return replace(self, **noise)


def camera_pose(center: np.ndarray, yaw: float, pitch: float) -> Pose:
    """World-to-camera pose of a camera at ``center`` turned by yaw (about y) then pitch (about x)"""
    to_world = so3_exp(np.array([0.0, yaw, 0.0])) @ so3_exp(np.array([pitch, 0.0, 0.0]))
    rotation = to_world.T
    return Pose(rotation, -rotation @ np.asarray(center, dtype=np.float64))


def _view_direction(yaw: float) -> np.ndarray:
    return so3_exp(np.array([0.0, yaw, 0.0])) @ np.array([0.0, 0.0, 1.0])


def _camera_path(rng: np.random.Generator, n_frames: int):
    c0 = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.2, 0.2), rng.uniform(-0.5, 0.5)])
    heading = rng.uniform(0.0, 2.0 * math.pi)
    velocity = 0.02 * np.array([math.cos(heading), 0.0, math.sin(heading)])
    yaw0 = rng.uniform(0.0, 2.0 * math.pi)
    yaw_rate = math.radians(rng.uniform(0.4, 0.8)) * rng.choice([-1.0, 1.0])
    pitch = math.radians(rng.uniform(-4.0, 4.0))
    centers = [c0 + velocity * i for i in range(n_frames)]
    yaws = [yaw0 + yaw_rate * i for i in range(n_frames)]
    poses = [camera_pose(c, y, pitch + math.radians(1.5) * math.sin(0.2 * i))
             for i, (c, y) in enumerate(zip(centers, yaws))]
    return poses, np.asarray(centers), yaws


def _inside_room(points: np.ndarray, room_half: np.ndarray, margin: np.ndarray) -> bool:
    return bool(np.all(np.abs(points) <= room_half - margin))


def _mover_path(rng: np.random.Generator, n_frames: int, centers: np.ndarray, yaws: List[float],
                room_half: np.ndarray, boxes: List[Box]) -> Mover:
    mid = n_frames // 2
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        half = np.full(3, rng.uniform(0.4, 0.5))
        forward = _view_direction(yaws[mid])
        right = np.array([forward[2], 0.0, -forward[0]])
        anchor = centers[mid] + forward * rng.uniform(2.4, 2.8)
        anchor[1] = rng.uniform(-0.1, 0.1)
        omega = rng.uniform(0.25, 0.32) * rng.choice([-1.0, 1.0])
        phase = rng.uniform(0.0, 2.0 * math.pi)
        spin = rng.uniform(0.03, 0.06)
        poses = []
        for i in range(n_frames):
            angle = phase + omega * i
            position = anchor + 0.7 * math.cos(angle) * right + 0.3 * math.sin(angle) * np.array([0.0, 1.0, 0.0])
            poses.append(Pose(so3_exp(np.array([0.0, spin * i, 0.0])), position))
        positions = np.array([p.translation for p in poses])
        reach = float(np.linalg.norm(half))
        sweep = float(np.hypot(half[0], half[2]))
        if not _inside_room(positions, room_half, np.array([sweep, half[1], sweep]) + 0.1):
            continue
        gaps = np.linalg.norm(positions - centers, axis=1)
        if gaps.min() < reach + 0.8:
            continue
        if any(np.linalg.norm(positions - box.center, axis=1).min() < reach + float(np.linalg.norm(box.half_size)) + 0.2
               for box in boxes):
            continue
        return Mover(half_size=half, poses=tuple(poses))
    raise SceneGenerationError("could not place a mover inside the room")


def _static_boxes(rng: np.random.Generator, count: int, room_half: np.ndarray) -> List[Box]:
    # boxes stay outside a central disc the camera never leaves
    boxes: List[Box] = []
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        if len(boxes) == count:
            break
        half = np.array([rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6)])
        center = np.array([
            rng.uniform(-room_half[0] + half[0] + 0.1, room_half[0] - half[0] - 0.1),
            room_half[1] - half[1],
            rng.uniform(-room_half[2] + half[2] + 0.1, room_half[2] - half[2] - 0.1),
        ])
        if math.hypot(center[0], center[2]) < BOX_RING:
            continue
        if any(np.all(np.abs(other.center - center) < other.half_size + half) for other in boxes):
            continue
        boxes.append(Box(center=center, half_size=half))
    return boxes


def random_scene_config(
    seed: int,
    n_frames: int = 30,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
    focal: float = DEFAULT_FOCAL,
    n_movers: int = 1,
    n_boxes: int = 3,
    camera_seed: Optional[int] = None,
    **noise,
) -> SceneConfig:
    """
    Draw a room-like scene

    The seed fixes the room, its boxes and textures; ``camera_seed`` (the
    seed by default) fixes the camera path and movers, so two configs that
    share a seed but not a camera seed revisit the same place.
    """
    rng = np.random.default_rng(seed)
    room_half = np.array([rng.uniform(5.0, 6.5), rng.uniform(1.3, 1.6), rng.uniform(5.0, 6.5)])
    boxes = _static_boxes(rng, n_boxes, room_half)
    camera_rng = np.random.default_rng([seed, seed if camera_seed is None else camera_seed, 1])
    poses, centers, yaws = _camera_path(camera_rng, n_frames)
    movers = [_mover_path(camera_rng, n_frames, centers, yaws, room_half, boxes) for _ in range(n_movers)]
    return SceneConfig(
        seed=seed,
        intrinsics=Intrinsics.centered(width, height, focal),
        camera_poses=tuple(poses),
        room_half=room_half,
        boxes=tuple(boxes),
        movers=tuple(movers),
        texture_seed=seed,
        **noise,
    )

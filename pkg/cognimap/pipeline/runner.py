"""
End-to-end pipeline: segment, recall, optimize, update

Segmentation runs frame by frame. Static pixels of every
``accumulation_stride``-th frame are lifted into the world and pooled; at
every cadence point the pooled cloud is matched against the memory bank
until a recall is accepted. The factor graph over the whole sequence is
then solved, with memory landmarks when a map was recalled. The static
cloud is lifted again with the optimized poses and the bank is updated
with it (or a new map created) before the outputs are written.
"""

import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from cognimap.cli.metrics import ate, mean_mask_iou, rpe
from cognimap.core.config import PipelineConfig
from cognimap.core.exceptions import CogniMapError, PipelineStageError
from cognimap.core.logging_config import StructuredLogger
from cognimap.geometry.camera import backproject_pixels
from cognimap.membank.keyframes import select_keyframes
from cognimap.membank.memory_bank import MemoryBank
from cognimap.membank.storage import persist_bank
from cognimap.membank.voxel import voxel_downsample
from cognimap.models.frame_models import FrameBundle
from cognimap.models.geometry_models import Pose
from cognimap.models.graph_models import SolveReport
from cognimap.models.memory_models import FeatureVec, PointCloud, RecallResult
from cognimap.models.motion_models import DynamicMask
from cognimap.models.report_models import MetricsReport
from cognimap.motioncue.segmenter import iter_masks
from cognimap.pipeline.formats import MASK_SUFFIX, PathLike, encode_pgm, frame_stem
from cognimap.pipeline.ingest import SequenceReader
from cognimap.posegraph.landmarks import (
    associate_landmarks,
    association_config,
    build_problem,
    inject_memory_landmarks,
    track_candidates,
)
from cognimap.posegraph.solver import solve
from cognimap.posegraph.trajectory_io import format_tum
from cognimap.services.monitoring import StageMonitor
from cognimap.synth.features import toy_geo_feature

logger = StructuredLogger(__name__)

ACCUMULATION_VOXEL_RATIO = 0.5
MASK_DIR = "masks"
TRAJECTORY_FILE = "trajectory.tum"
METRICS_FILE = "metrics.json"
BANK_DIR = "bank"


def static_points(frame: FrameBundle, mask: DynamicMask, conf_min: float, pose: Optional[Pose] = None) -> PointCloud:
    """World points of a frame's static, confident pixels with valid depth

    ``pose`` replaces the prior pose when lifting.
    """
    keep = frame.depth.valid & ~mask.m_dyn & (frame.confidence >= conf_min)
    ys, xs = np.nonzero(keep)
    camera = backproject_pixels(xs, ys, frame.depth.values[keep], frame.intrinsics)
    pose = pose if pose is not None else frame.init_pose
    return PointCloud((camera - pose.translation) @ pose.rotation, frame.confidence[keep])


class StaticAccumulator:
    """
    Pooled static cloud of a sequence

    Every ``stride``-th frame contributes. The pool is voxel-downsampled on
    each contribution with a voxel fixed by the first one, so its content
    does not depend on when it is read.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.cloud = PointCloud.empty()
        self.voxel: Optional[float] = None
        self.frames: List[int] = []

    def add(self, index: int, frame: FrameBundle, mask: DynamicMask, pose: Optional[Pose] = None) -> bool:
        if index % self.config.accumulation_stride:
            return False
        points = static_points(frame, mask, self.config.conf_min, pose)
        if len(points) == 0:
            return False
        if self.voxel is None:
            base = self.config.voxel_size or self.config.voxel_frac * points.diameter()
            if not base > 0:
                return False
            self.voxel = ACCUMULATION_VOXEL_RATIO * base
        self.cloud = voxel_downsample(self.cloud.concatenate(points), self.voxel)
        self.frames.append(frame.frame_id)
        return True


def refined_static_cloud(frames: Sequence[FrameBundle], masks: Sequence[DynamicMask], poses: Sequence[Pose],
                        config: PipelineConfig) -> PointCloud:
    """Static cloud pooled like StaticAccumulator but lifted with the optimized poses"""
    accumulator = StaticAccumulator(config)
    for i, (frame, mask, pose) in enumerate(zip(frames, masks, poses)):
        accumulator.add(i, frame, mask, pose)
    return accumulator.cloud


@dataclass
class PipelineOutputs:
    """Everything a run produced"""
    masks: List[DynamicMask]
    init_poses: List[Pose]
    poses: List[Pose]
    solve_report: SolveReport
    static_cloud: PointCloud
    metrics: MetricsReport
    recall: Optional[RecallResult] = None
    map_id: Optional[int] = None
    map_created: bool = False
    recall_attempts: List[Tuple[int, RecallResult]] = field(default_factory=list)
    out_dir: Optional[Path] = None


class PipelineRunner:
    """
    Runs one sequence against a memory bank

    Args:
        config: Pipeline tunables
        bank: Memory bank to recall from and write into; a fresh one when omitted
        monitor: Stage timer; a fresh one when omitted
    """

    def __init__(self, config: Optional[PipelineConfig] = None, bank: Optional[MemoryBank] = None,
                 monitor: Optional[StageMonitor] = None):
        self.config = config or PipelineConfig()
        self.bank = bank if bank is not None else MemoryBank(self.config, geo_encoder=toy_geo_feature)
        if self.bank.geo_encoder is None:
            self.bank.geo_encoder = toy_geo_feature
        self.monitor = monitor or StageMonitor()

    # Stages

    def load(self, sequence: Union[PathLike, Sequence[FrameBundle]]):
        if not isinstance(sequence, (str, Path)):
            return list(sequence), None
        reader = SequenceReader(sequence)
        frames = []
        for position, index in enumerate(reader.frame_indices):
            try:
                frames.append(reader.read_frame(index))
            except CogniMapError as e:
                raise PipelineStageError(str(e), frame_index=position, stage="ingest") from e
        return frames, reader

    def _keyframe_features(self, frames: Sequence[FrameBundle], upto: int) -> List[Tuple[int, FeatureVec]]:
        described = [(f.frame_id, f.visual_feat) for f in frames[:upto + 1] if f.visual_feat is not None]
        if not described:
            return []
        kept = select_keyframes([feat for _, feat in described], self.config.keyframe_distance)
        return [described[i] for i in kept]

    def _recall(self, frames: Sequence[FrameBundle], upto: int, cloud: PointCloud) -> Optional[RecallResult]:
        features = self._keyframe_features(frames, upto)
        if not features or len(cloud) == 0:
            return None
        query_geo = toy_geo_feature(cloud)
        return self.bank.recall([feat for _, feat in features], cloud, query_geo=query_geo)

    def segment_and_recall(self, frames: Sequence[FrameBundle]):
        cfg = self.config
        masks: List[DynamicMask] = []
        accumulator = StaticAccumulator(cfg)
        attempts: List[Tuple[int, RecallResult]] = []
        accepted: Optional[RecallResult] = None
        generator = iter_masks(frames, cfg)
        for i in range(len(frames)):
            with self.monitor.stage("segment", frame=i):
                try:
                    mask = next(generator)
                except CogniMapError as e:
                    raise PipelineStageError(str(e), frame_index=i, stage="segment") from e
            masks.append(mask)

            with self.monitor.stage("memory", frame=i):
                try:
                    accumulator.add(i, frames[i], mask)
                    at_cadence = (i + 1) % cfg.cadence == 0 or i == len(frames) - 1
                    if accepted is None and at_cadence:
                        result = self._recall(frames, i, accumulator.cloud)
                        if result is not None:
                            attempts.append((i, result))
                            logger.info("Recall", frame=i, accepted=result.accepted, stage=result.stage,
                                        map_id=result.voted_map, reason=result.reason or "-")
                            if result.accepted:
                                accepted = result
                except CogniMapError as e:
                    raise PipelineStageError(str(e), frame_index=i, stage="memory") from e
        return masks, accumulator, attempts, accepted

    def optimize(self, frames: Sequence[FrameBundle], masks: Sequence[DynamicMask],
                  accepted: Optional[RecallResult]):
        cfg = self.config
        candidates = track_candidates(frames, masks, cfg.conf_min, cfg.grid_step, cfg.track_length)
        assoc = association_config(cfg, candidates)
        landmarks, observations = associate_landmarks(
            candidates, assoc,
            poses=[f.init_pose for f in frames],
            intrinsics=[f.intrinsics for f in frames],
            huber_delta=cfg.huber_delta, sigma_proj=cfg.sigma_proj, sigma_depth_rel=cfg.sigma_depth_rel,
        )
        problem = build_problem(frames, landmarks, observations, cfg)
        if accepted is not None:
            problem = inject_memory_landmarks(
                problem, self.bank.get(accepted.candidate_map), accepted.alignment,
                assoc.tau_dist, alpha_mem=cfg.alpha_mem, fixed=cfg.memory_landmarks_fixed,
            )
        logger.info("Factor graph", frames=len(frames), landmarks=len(problem.landmarks),
                    observations=len(problem.observations))
        return solve(
            problem, max_iter=cfg.lm_max_iter, lambda_init=cfg.lm_lambda_init, lambda_max=cfg.lm_lambda_max,
            outer_iterations=cfg.outer_iterations, outlier_factor=cfg.outlier_factor, eps_z=cfg.behind_eps,
        )

    def _update_bank(self, frames: Sequence[FrameBundle], cloud: PointCloud,
                     accepted: Optional[RecallResult]) -> Tuple[Optional[int], bool]:
        features = self._keyframe_features(frames, len(frames) - 1)
        if accepted is not None:
            self.bank.update_map(accepted.candidate_map, cloud, features, accepted.alignment)
            return accepted.candidate_map, False
        if not self.config.create_new_maps:
            return None, False
        if len(cloud) == 0:
            logger.warning("No static points accumulated, no map created", frames=len(frames))
            return None, False
        return self.bank.create_map(cloud, features, geo_feat=toy_geo_feature(cloud)), True

    # Outputs

    def _metrics(self, frames, masks, poses, reader: Optional[SequenceReader], map_id, created) -> MetricsReport:
        values = {
            "frames": len(frames),
            "maps_created": int(created),
            "maps_updated": int(map_id is not None and not created),
            "stage_times": dict(self.monitor.stage_times),
            "peak_rss_mb": self.monitor.peak_rss_mb,
        }
        if reader is not None:
            gt_poses = reader.ground_truth_poses()
            if gt_poses is not None and len(gt_poses) == len(poses) and len(poses) >= 2:
                values["ate_rmse"] = ate(poses, gt_poses)
                values["ate_initial"] = ate([f.init_pose for f in frames], gt_poses)
                values["rpe_trans"], values["rpe_rot"] = rpe(poses, gt_poses)
            gt_masks = reader.ground_truth_masks()
            if gt_masks is not None:
                values["mask_iou"] = mean_mask_iou([m.m_dyn for m in masks], gt_masks)
        return MetricsReport(**values)

    def _write(self, out_dir: Path, frames, outputs: PipelineOutputs, bank_dir: Optional[Path]) -> None:
        out_dir.parent.mkdir(parents=True, exist_ok=True)
        staging = out_dir.parent / f".{out_dir.name}.tmp-{os.getpid()}"
        if staging.exists():
            shutil.rmtree(staging)
        try:
            (staging / MASK_DIR).mkdir(parents=True)
            for frame, mask in zip(frames, outputs.masks):
                (staging / MASK_DIR / f"{frame_stem(frame.frame_id)}{MASK_SUFFIX}").write_bytes(encode_pgm(mask.m_dyn))
            stamps = [float(f.frame_id) for f in frames]
            (staging / TRAJECTORY_FILE).write_text(format_tum(outputs.poses, stamps), encoding="utf-8")
            (staging / METRICS_FILE).write_text(outputs.metrics.model_dump_json(indent=2), encoding="utf-8")
            if bank_dir is None:
                persist_bank(self.bank, staging / BANK_DIR)
            if out_dir.exists():
                shutil.rmtree(out_dir)
            os.replace(staging, out_dir)
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        if bank_dir is not None:
            persist_bank(self.bank, bank_dir)

    def run(self, sequence: Union[PathLike, Sequence[FrameBundle]], out_dir: Optional[PathLike] = None,
            bank_dir: Optional[PathLike] = None) -> PipelineOutputs:
        """
        Process a sequence directory or a list of frames

        Args:
            sequence: Sequence directory or frames in order
            out_dir: Where masks, trajectory.tum, metrics.json and (without
                ``bank_dir``) bank/ are written; nothing is written when omitted
            bank_dir: Persist the bank here instead of under ``out_dir``

        Raises:
            PipelineStageError: carrying the failing frame (when known) and stage
        """
        with self.monitor.stage("io"):
            frames, reader = self.load(sequence)
        if not frames:
            raise PipelineStageError("sequence has no frames", stage="ingest")
        logger.info("Run started", frames=len(frames), maps=len(self.bank), cadence=self.config.cadence)

        masks, accumulator, attempts, accepted = self.segment_and_recall(frames)

        with self.monitor.stage("optimize"):
            try:
                result = self.optimize(frames, masks, accepted)
            except CogniMapError as e:
                raise PipelineStageError(str(e), stage="optimize") from e

        with self.monitor.stage("memory"):
            try:
                cloud = refined_static_cloud(frames, masks, result.poses, self.config)
                map_id, created = self._update_bank(frames, cloud, accepted)
            except CogniMapError as e:
                raise PipelineStageError(str(e), stage="memory") from e

        outputs = PipelineOutputs(
            masks=masks,
            init_poses=[f.init_pose for f in frames],
            poses=result.poses,
            solve_report=result.report,
            static_cloud=cloud,
            metrics=self._metrics(frames, masks, result.poses, reader, map_id, created),
            recall=accepted,
            map_id=map_id,
            map_created=created,
            recall_attempts=attempts,
        )
        if out_dir is not None:
            out_dir = Path(out_dir)
            with self.monitor.stage("io"):
                try:
                    self._write(out_dir, frames, outputs, Path(bank_dir) if bank_dir is not None else None)
                except (CogniMapError, OSError) as e:
                    raise PipelineStageError(str(e), stage="io") from e
            outputs.out_dir = out_dir
        logger.info("Run finished", frames=len(frames), map_id=map_id, created=created,
                    termination=result.report.termination, ate=outputs.metrics.ate_rmse)
        return outputs


def run(sequence: Union[PathLike, Sequence[FrameBundle]], bank: Optional[MemoryBank] = None,
        config: Optional[PipelineConfig] = None, out_dir: Optional[PathLike] = None,
        bank_dir: Optional[PathLike] = None) -> PipelineOutputs:
    """Run the pipeline once (see PipelineRunner.run)"""
    return PipelineRunner(config, bank).run(sequence, out_dir=out_dir, bank_dir=bank_dir)

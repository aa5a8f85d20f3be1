"""
Cognitive memory bank: map creation, recall and update
"""

import logging
from collections import Counter
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from cognimap.core.config import PipelineConfig
from cognimap.core.exceptions import ContractViolationError, EmptyInputError, EmptySceneError, InputValueError
from cognimap.icp.icp import icp_align, overlap_fractions
from cognimap.icp.nn_index import build_nn_index
from cognimap.membank.feature_table import FeatureTable
from cognimap.membank.octree import Octree, build_octree
from cognimap.membank.voxel import quantize_cloud, sort_by_voxel, voxel_downsample, voxel_keys
from cognimap.models.geometry_models import Pose
from cognimap.models.memory_models import (
    VISUAL_DIM,
    AlignmentResult,
    FeatureVec,
    MemoryMap,
    PointCloud,
    RecallResult,
    TableMatch,
)

logger = logging.getLogger(__name__)

GeoEncoder = Callable[[PointCloud], FeatureVec]
KeyframeFeatures = Sequence[Tuple[int, FeatureVec]]


def centroid_init(source: PointCloud, target: PointCloud, init: Pose) -> Pose:
    """``init``'s rotation with the translation that lines up both centroids"""
    translation = target.centroid() - init.rotation @ source.centroid()
    return Pose(init.rotation, translation)


class MemoryBank:
    """
    Stored scenes plus the global feature table

    Args:
        config: Thresholds and defaults
        geo_encoder: Recomputes a map's geometric descriptor after a merge;
            without one the descriptor from creation is kept
    """

    def __init__(self, config: Optional[PipelineConfig] = None, geo_encoder: Optional[GeoEncoder] = None,
                 hash_seed: Optional[int] = None):
        self.config = config or PipelineConfig()
        self.geo_encoder = geo_encoder
        self.table = FeatureTable(
            dim=VISUAL_DIM,
            n_planes=self.config.hash_planes,
            seed=self.config.seed if hash_seed is None else hash_seed,
            exact_fallback_below=self.config.exact_fallback_below,
        )
        self.maps: Dict[int, MemoryMap] = {}
        self.next_map_id = 1
        self.visit_count = 0
        self._octrees: Dict[int, Octree] = {}
        self._d_match: Optional[float] = None

    def __len__(self) -> int:
        return len(self.maps)

    def __contains__(self, map_id: int) -> bool:
        return map_id in self.maps

    def get(self, map_id: int) -> MemoryMap:
        if map_id not in self.maps:
            raise InputValueError(f"no map with id {map_id}")
        return self.maps[map_id]

    # Thresholds

    def d_match(self) -> float:
        """Vote distance: configured, or a fraction of the median inter-map feature distance"""
        if self.config.d_match is not None:
            return self.config.d_match
        if self._d_match is None:
            self._d_match = self.config.d_match_scale * self.table.inter_map_median_distance()
        return self._d_match

    def geo_rank_ratio(self, query_geo: FeatureVec, map_id: int) -> float:
        """
        Geo distance to ``map_id`` over the smallest geo distance to any described map

        1.0 means ``map_id`` is the nearest; inf when ``map_id`` has no descriptor.
        """
        distances = {i: query_geo.distance(m.geo_feat) for i, m in self.maps.items() if m.geo_feat is not None}
        if map_id not in distances:
            return float("inf")
        nearest = min(distances.values())
        if nearest <= 0.0:
            return 1.0 if distances[map_id] <= 0.0 else float("inf")
        return distances[map_id] / nearest

    # Mutations

    def _register_features(self, map_id: int, features: KeyframeFeatures) -> None:
        for frame_id, feature in features:
            self.table.add(feature, map_id, frame_id)
        self._d_match = None

    def _octree(self, map_id: int) -> Octree:
        if map_id not in self._octrees:
            self._octrees[map_id] = build_octree(self.maps[map_id].static_cloud, self.config.leaf_capacity)
        return self._octrees[map_id]

    def create_map(self, static_cloud: PointCloud, kf_feats: KeyframeFeatures,
                   geo_feat: Optional[FeatureVec] = None, voxel: Optional[float] = None) -> int:
        """
        Store a new scene and return its id

        The voxel size defaults to the configured one, else ``voxel_frac`` of
        the cloud diameter. Creation never deduplicates.

        Raises:
            EmptySceneError: the static cloud has no points
        """
        if len(static_cloud) == 0:
            raise EmptySceneError("cannot create a map from an empty static cloud")
        if voxel is None:
            voxel = self.config.voxel_size or self.config.voxel_frac * static_cloud.diameter()
        if not voxel > 0:
            # a single point (or coincident points) has zero diameter
            voxel = self.config.voxel_size or 1.0
        cloud = quantize_cloud(voxel_downsample(static_cloud, voxel), voxel)

        map_id = self.next_map_id
        self.next_map_id += 1
        self.visit_count += 1
        if geo_feat is None and self.geo_encoder is not None:
            geo_feat = self.geo_encoder(cloud)
        self.maps[map_id] = MemoryMap(
            map_id=map_id,
            static_cloud=cloud,
            keyframe_feats=list(kf_feats),
            geo_feat=geo_feat,
            voxel_size=float(voxel),
            created=self.visit_count,
        )
        self._register_features(map_id, kf_feats)
        logger.info(f"Created map {map_id}: {len(cloud)} points, {len(kf_feats)} keyframes, voxel {voxel:.4g} m")
        return map_id

    def update_map(self, map_id: int, static_cloud: PointCloud, new_kf_feats: KeyframeFeatures,
                   alignment: AlignmentResult) -> MemoryMap:
        """
        Merge a query cloud into a stored map

        ``alignment.transform`` carries ``static_cloud`` into the map frame.
        Voxels the map already occupies keep their stored point; newly
        reached voxels receive the centroid of the incoming points, so
        repeating an update changes nothing.

        Raises:
            ContractViolationError: the alignment was not accepted
        """
        if not alignment.accepted:
            raise ContractViolationError(f"refusing to update map {map_id} with a rejected alignment")
        memory = self.get(map_id)
        voxel = memory.voxel_size
        incoming = voxel_downsample(static_cloud.transformed(alignment.transform), voxel)

        added = 0
        if len(incoming) > 0:
            lo = incoming.points.min(axis=0) - voxel
            hi = incoming.points.max(axis=0) + voxel
            nearby = self._octree(map_id).range_query(lo, hi)
            occupied = set(map(tuple, voxel_keys(memory.static_cloud.points[nearby], voxel).tolist()))
            fresh = np.array([key not in occupied
                              for key in map(tuple, voxel_keys(incoming.points, voxel).tolist())], dtype=bool)
            added = int(np.count_nonzero(fresh))
            if added:
                new_points = PointCloud(
                    incoming.points[fresh],
                    incoming.confidence[fresh] if incoming.confidence is not None else None,
                )
                merged = sort_by_voxel(memory.static_cloud.concatenate(new_points), voxel)
                memory.static_cloud = quantize_cloud(merged, voxel)
                self._octrees.pop(map_id, None)

        memory.keyframe_feats.extend(new_kf_feats)
        self._register_features(map_id, new_kf_feats)
        memory.updated += 1
        self.visit_count += 1
        if added and self.geo_encoder is not None:
            memory.geo_feat = self.geo_encoder(memory.static_cloud)
        logger.info(f"Updated map {map_id}: +{added} points, +{len(new_kf_feats)} keyframes")
        return memory

    # Queries

    def table_query(self, feature: FeatureVec, n: int = 1) -> List[TableMatch]:
        return self.table.query(feature, n)

    def vote(self, query_feats: Sequence[FeatureVec]) -> Dict[int, int]:
        """Each query feature votes for its nearest entry's map when closer than d_match"""
        d_match = self.d_match()
        votes: Counter = Counter()
        for feature in query_feats:
            hits = self.table.query(feature, 1)
            if hits and hits[0].distance < d_match:
                votes[hits[0].map_id] += 1
        return dict(sorted(votes.items()))

    def verify(self, query_static: PointCloud, map_id: int, init_align: Optional[Pose] = None) -> AlignmentResult:
        """
        ICP from two starting points (the given one and its centroid-aligned
        variant); the run with more inliers is kept and judged

        Acceptance needs enough inliers, a small inlier RMSE, and mutual
        overlap: at least ``icp_overlap_min`` of the query lies on the map and
        at least as much of the map inside the query's bounds lies on the query.
        """
        cfg = self.config
        target = self.maps[map_id].static_cloud
        if len(query_static) < 3 or len(target) < 3:
            return AlignmentResult(transform=init_align or Pose.identity(), inlier_count=0,
                                   rmse=float("inf"), iterations=0, reason="too few points to align")
        diameter = target.diameter()
        index = build_nn_index(target)
        init = init_align or Pose.identity()
        best: Optional[AlignmentResult] = None
        for start in (init, centroid_init(query_static, target, init)):
            result = icp_align(query_static, target, init=start, max_iter=cfg.icp_max_iter,
                               corr_dist=cfg.icp_corr_frac * diameter,
                               inlier_dist=cfg.icp_inlier_frac * diameter,
                               tol=cfg.icp_tol, index=index)
            if best is None or result.inlier_count > best.inlier_count:
                best = result

        n_required = cfg.n_inlier(len(query_static))
        r_max = cfg.r_max_frac * diameter
        if best.inlier_count < n_required:
            return best.with_decision(False, f"{best.inlier_count} inliers, {n_required} required")
        if best.rmse > r_max:
            return best.with_decision(False, f"rmse {best.rmse:.4g} above {r_max:.4g}")
        forward, backward = overlap_fractions(query_static, target, best.transform,
                                              cfg.icp_inlier_frac * diameter, index=index)
        if min(forward, backward) < cfg.icp_overlap_min:
            return best.with_decision(
                False, f"overlap {forward:.3f} query-side, {backward:.3f} map-side, {cfg.icp_overlap_min:.3f} required"
            )
        return best.with_decision(True)

    def recall(self, query_feats: Sequence[FeatureVec], query_static: PointCloud,
               init_align: Optional[Pose] = None, query_geo: Optional[FeatureVec] = None) -> RecallResult:
        """
        Match a query against the bank

        Votes pick the strict max-vote map with at least ``v_min`` votes. In
        modes ``2d3d`` and ``full`` that map must also be (within
        ``geo_rank_tolerance``) the nearest stored map by geo descriptor;
        mode ``full`` then verifies with ICP.
        """
        if len(query_feats) == 0:
            raise EmptyInputError("recall needs at least one query feature")
        if len(self.table) == 0:
            return RecallResult.rejected(reason="empty bank")

        votes = self.vote(query_feats)
        if not votes:
            return RecallResult.rejected(votes, reason="no feature within the match distance")
        top = max(votes.values())
        winners = [map_id for map_id, count in votes.items() if count == top]
        if len(winners) > 1:
            return RecallResult.rejected(votes, reason=f"tie between maps {winners}")
        voted = winners[0]
        v_min = self.config.v_min(len(query_feats))
        if top < v_min:
            return RecallResult.rejected(votes, reason=f"{top} votes, {v_min} required", voted_map=voted)

        mode = self.config.recall_mode
        init = init_align or Pose.identity()
        if mode == "2d":
            return self._accept_unverified(voted, votes, query_static, init, stage="vote")

        if query_geo is not None and self.maps[voted].geo_feat is not None:
            ratio = self.geo_rank_ratio(query_geo, voted)
            tolerance = self.config.geo_rank_tolerance
            if ratio > tolerance:
                return RecallResult.rejected(
                    votes, stage="geo", voted_map=voted,
                    reason=f"geo distance {ratio:.4g}x that of the nearest map, {tolerance:.4g}x allowed",
                )
        if mode == "2d3d":
            return self._accept_unverified(voted, votes, query_static, init, stage="geo")

        alignment = self.verify(query_static, voted, init)
        if not alignment.accepted:
            logger.debug(f"Recall of map {voted} rejected by ICP: {alignment.reason}")
            return RecallResult.rejected(votes, stage="icp", voted_map=voted, alignment=alignment,
                                         reason=alignment.reason)
        return RecallResult(candidate_map=voted, votes=votes, alignment=alignment,
                            voted_map=voted, stage="icp")

    def _accept_unverified(self, map_id: int, votes: Dict[int, int], query_static: PointCloud,
                           init: Pose, stage: str) -> RecallResult:
        target = self.maps[map_id].static_cloud
        transform = centroid_init(query_static, target, init) if len(query_static) else init
        alignment = AlignmentResult(transform=transform, inlier_count=0, rmse=0.0, iterations=0, accepted=True)
        return RecallResult(candidate_map=map_id, votes=votes, alignment=alignment, voted_map=map_id, stage=stage)

    # Reporting

    def inspect(self) -> List[Dict[str, object]]:
        """One row per map with its registry and occupancy figures"""
        rows = []
        for map_id in sorted(self.maps):
            memory = self.maps[map_id]
            cloud = memory.static_cloud
            extent = (cloud.points.max(axis=0) - cloud.points.min(axis=0)).tolist() if len(cloud) else [0.0] * 3
            rows.append({
                "map_id": map_id,
                "points": len(cloud),
                "keyframes": len(memory.keyframe_feats),
                "voxel_size": memory.voxel_size,
                "extent": extent,
                "octree_leaves": self._octree(map_id).leaf_count(),
                "created": memory.created,
                "updated": memory.updated,
            })
        return rows

"""
Seeded end-to-end runs over synthetic scenes: mask quality, noise recovery,
recall accuracy, update invariants and the effect of recalled memory
"""

import math

import numpy as np
import pytest

from cognimap.cli.metrics import ate, mean_mask_iou
from cognimap.core.config import PipelineConfig
from cognimap.geometry.se3 import se3_exp
from cognimap.membank.memory_bank import MemoryBank
from cognimap.membank.storage import load_bank, persist_bank
from cognimap.membank.voxel import occupied_voxels, voxel_keys
from cognimap.models.memory_models import VISUAL_DIM, AlignmentResult, FeatureVec, PointCloud
from cognimap.models.motion_models import DynamicMask
from cognimap.motioncue import segment_sequence
from cognimap.pipeline.runner import PipelineRunner
from cognimap.synth.features import toy_geo_feature
from cognimap.synth.renderer import generate
from cognimap.synth.scene import random_scene_config
from tests.conftest import structured_cloud

pytestmark = [pytest.mark.slow, pytest.mark.integration]

STORED_SEEDS = tuple(range(300, 310))
UNSEEN_SEEDS = (310, 311, 312)
THIRD = 10


def _refine(frames):
    h, w = frames[0].shape
    masks = [DynamicMask.static(h, w) for _ in frames]
    return PipelineRunner(PipelineConfig()).optimize(frames, masks, None).poses


def _accepted(transform) -> AlignmentResult:
    return AlignmentResult(transform=transform, inlier_count=100, rmse=0.0, iterations=1, accepted=True)


class TestMaskQuality:
    @pytest.mark.parametrize("seed", range(20))
    def test_tracks_one_mover(self, seed):
        frames, truth = generate(random_scene_config(seed, n_frames=30, flow_sigma=0.2))
        masks = segment_sequence(frames, PipelineConfig())
        assert mean_mask_iou([m.m_dyn for m in masks], truth.masks) >= 0.90


class TestNoiseRecovery:
    @pytest.mark.parametrize("sigma_deg, max_ratio", [(3.0, 0.3), (5.0, 0.5)])
    def test_refined_trajectory_beats_the_prior(self, sigma_deg, max_ratio):
        for seed in range(10):
            base = random_scene_config(seed, n_frames=20, n_movers=0)
            noisy = base.with_noise(pose_sigma_rot=math.radians(sigma_deg),
                                    pose_sigma_trans=0.03 * base.diameter())
            frames, truth = generate(noisy)
            initial = ate([f.init_pose for f in frames], truth.poses)
            refined = ate(_refine(frames), truth.poses)
            assert refined <= max_ratio * initial, f"seed {seed}: {refined:.4f} vs initial {initial:.4f}"


class TestRecallAccuracy:
    @pytest.fixture(scope="class")
    def stored(self):
        """First third of every stored scene in one bank, plus every scene's frames"""
        config = PipelineConfig()
        bank = MemoryBank(config, geo_encoder=toy_geo_feature)
        map_ids = {}
        sequences = {}
        for seed in STORED_SEEDS + UNSEEN_SEEDS:
            frames, _ = generate(random_scene_config(seed, n_frames=3 * THIRD, n_movers=0))
            sequences[seed] = frames
            if seed in STORED_SEEDS:
                map_ids[seed] = PipelineRunner(config, bank).run(frames[:THIRD]).map_id
        return config, bank, map_ids, sequences

    def _recall(self, config, bank, frames):
        _, _, _, accepted = PipelineRunner(config, bank).segment_and_recall(frames)
        return accepted

    def test_every_scene_has_its_map(self, stored):
        _, bank, map_ids, _ = stored
        assert len(bank) == len(STORED_SEEDS)
        assert len(set(map_ids.values())) == len(STORED_SEEDS)

    def test_revisits_recalled_without_false_accepts(self, stored):
        config, bank, map_ids, sequences = stored
        correct = 0
        false_accepts = []
        queries = 0
        for seed in STORED_SEEDS:
            for start in (THIRD, 2 * THIRD):
                queries += 1
                accepted = self._recall(config, bank, sequences[seed][start:start + THIRD])
                if accepted is None:
                    continue
                if accepted.candidate_map == map_ids[seed]:
                    correct += 1
                else:
                    false_accepts.append((seed, start, accepted.candidate_map))
        for seed in UNSEEN_SEEDS:
            accepted = self._recall(config, bank, sequences[seed][:THIRD])
            if accepted is not None:
                false_accepts.append((seed, 0, accepted.candidate_map))

        assert false_accepts == []
        assert correct >= 0.95 * queries


class TestUpdateInvariants:
    def test_rounds_keep_voxel_bound_and_grow_monotonically(self, rng, sample_config):
        voxel = 0.1
        bank = MemoryBank(sample_config, geo_encoder=toy_geo_feature)
        map_id = bank.create_map(structured_cloud(rng), [(0, FeatureVec(rng.normal(size=VISUAL_DIM)))],
                                 voxel=voxel)
        for round_index in range(1, 11):
            transform = se3_exp(np.concatenate([rng.normal(0.0, 0.5, 3), rng.normal(0.0, 0.2, 3)]))
            incoming = PointCloud(structured_cloud(rng).points + rng.normal(0.0, 1.0, 3))
            before = occupied_voxels(bank.get(map_id).static_cloud, voxel)

            bank.update_map(map_id, incoming, [(round_index, FeatureVec(rng.normal(size=VISUAL_DIM)))],
                            _accepted(transform))
            stored = bank.get(map_id).static_cloud
            assert np.unique(voxel_keys(stored.points, voxel), axis=0).shape[0] == len(stored)
            assert before <= occupied_voxels(stored, voxel)

            snapshot = stored.points.copy()
            bank.update_map(map_id, incoming, [], _accepted(transform))
            np.testing.assert_array_equal(bank.get(map_id).static_cloud.points, snapshot)

    def test_reloaded_bank_answers_like_the_original(self, tmp_path, rng, sample_config):
        bank = MemoryBank(sample_config, geo_encoder=toy_geo_feature, hash_seed=3)
        clouds = []
        for m in range(5):
            cloud = PointCloud(structured_cloud(rng).points + np.array([25.0 * m, 0.0, 0.0]))
            clouds.append(cloud)
            bank.create_map(cloud, [(f, FeatureVec(rng.normal(size=VISUAL_DIM))) for f in range(4)])
        persist_bank(bank, tmp_path / "bank")
        loaded = load_bank(tmp_path / "bank", sample_config)

        for _ in range(50):
            m = int(rng.integers(len(clouds)))
            stored = bank.get(m + 1)
            base = stored.keyframe_feats[int(rng.integers(len(stored.keyframe_feats)))][1]
            feats = [FeatureVec(base.values + rng.normal(size=VISUAL_DIM) * 0.01)
                     if rng.random() < 0.7 else FeatureVec(rng.normal(size=VISUAL_DIM))]
            query = stored.static_cloud

            original = bank.table_query(feats[0], n=3)
            reloaded = loaded.table_query(feats[0], n=3)
            assert [(h.map_id, h.frame_id) for h in original] == [(h.map_id, h.frame_id) for h in reloaded]
            np.testing.assert_allclose([h.distance for h in original], [h.distance for h in reloaded], rtol=1e-6)

            a = bank.recall(feats, query, query_geo=toy_geo_feature(query))
            b = loaded.recall(feats, query, query_geo=toy_geo_feature(query))
            assert (a.accepted, a.candidate_map, a.stage) == (b.accepted, b.candidate_map, b.stage)


class TestMemoryBenefit:
    def test_recalled_landmarks_do_not_hurt(self):
        config = PipelineConfig()
        wins = []
        for seed in range(400, 410):
            base = random_scene_config(seed, n_frames=20, n_movers=0)
            first, _ = generate(base)
            bank = MemoryBank(config, geo_encoder=toy_geo_feature)
            PipelineRunner(config, bank).run(first)

            noisy = base.with_noise(pose_sigma_rot=math.radians(3.0), pose_sigma_trans=0.03 * base.diameter())
            frames, truth = generate(noisy)
            runner = PipelineRunner(config, bank)
            masks, _, _, accepted = runner.segment_and_recall(frames)
            if accepted is None:
                wins.append(False)
                continue
            without = ate(runner.optimize(frames, masks, None).poses, truth.poses)
            with_memory = ate(runner.optimize(frames, masks, accepted).poses, truth.poses)
            wins.append(with_memory <= without + 1e-9)
        assert sum(wins) >= 9

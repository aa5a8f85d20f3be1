"""
Synthetic scene generation tests
"""

import numpy as np
import pytest

from cognimap.core.exceptions import EmptyInputError, InputShapeError, SceneGenerationError
from cognimap.models.geometry_models import Intrinsics, Pose
from cognimap.models.memory_models import GEO_DIM, VISUAL_DIM, PointCloud
from cognimap.synth import (
    SceneConfig,
    generate,
    perturb_poses,
    toy_geo_feature,
    toy_visual_feature,
    write_sequence,
)
from cognimap.synth.scene import camera_pose
from tests.conftest import SMALL_HEIGHT, SMALL_WIDTH, small_scene


class TestSceneConfig:
    def test_same_seed_same_scene(self):
        a, b = small_scene(3), small_scene(3)
        assert a.camera_poses == b.camera_poses
        np.testing.assert_array_equal(a.room_half, b.room_half)

    def test_camera_seed_keeps_the_room(self):
        a = small_scene(3)
        b = small_scene(3, camera_seed=99)
        np.testing.assert_array_equal(a.room_half, b.room_half)
        assert [box.center.tolist() for box in a.boxes] == [box.center.tolist() for box in b.boxes]
        assert a.camera_poses != b.camera_poses

    def test_camera_pose_center(self):
        center = np.array([0.3, -0.1, 0.7])
        pose = camera_pose(center, yaw=0.4, pitch=0.05)
        assert pose.is_valid()
        np.testing.assert_allclose(pose.center, center, atol=1e-12)

    def test_needs_a_camera(self):
        with pytest.raises(SceneGenerationError):
            SceneConfig(seed=0, intrinsics=Intrinsics.centered(8, 8, 10.0), camera_poses=(), room_half=np.ones(3))

    def test_mover_pose_count_checked(self):
        cfg = small_scene(3, n_frames=4)
        mover = cfg.movers[0]
        short = type(mover)(half_size=mover.half_size, poses=mover.poses[:2])
        with pytest.raises(SceneGenerationError):
            cfg.with_noise(movers=(short,))

    @pytest.mark.parametrize("noise", [{"depth_sigma": -0.1}, {"depth_dropout": 1.0}, {"match_step": 0}])
    def test_rejects_bad_noise(self, noise):
        with pytest.raises(SceneGenerationError):
            small_scene(3, n_frames=2, **noise)


class TestGenerate:
    def test_shapes(self, sample_scene, sample_sequence):
        frames, truth = sample_sequence
        n = sample_scene.n_frames
        assert len(frames) == len(truth.poses) == len(truth.depth) == len(truth.masks) == n
        assert frames[0].flow_prev is None and truth.flow[0] is None and truth.matches[0] is None
        for frame, flow in zip(frames[1:], truth.flow[1:]):
            assert frame.flow_prev.shape == (SMALL_HEIGHT, SMALL_WIDTH)
            assert flow.shape == (SMALL_HEIGHT, SMALL_WIDTH)
        assert all(frame.visual_feat.dim == VISUAL_DIM for frame in frames)
        assert len(truth.static_cloud) > 0

    def test_deterministic(self, sample_scene, sample_sequence):
        frames, truth = sample_sequence
        again_frames, again_truth = generate(sample_scene)
        for a, b in zip(frames, again_frames):
            np.testing.assert_array_equal(a.depth.values, b.depth.values)
            assert a.init_pose == b.init_pose
            assert a.visual_feat == b.visual_feat
        for a, b in zip(truth.masks, again_truth.masks):
            np.testing.assert_array_equal(a, b)

    def test_exact_priors(self, sample_sequence):
        frames, truth = sample_sequence
        for frame, pose, depth in zip(frames, truth.poses, truth.depth):
            np.testing.assert_allclose(frame.init_pose.matrix(), pose.matrix(), atol=1e-12)
            assert frame.depth.valid.all()
            np.testing.assert_allclose(frame.depth.values, depth.values, rtol=1e-6)
            assert (frame.confidence == 1.0).all()

    def test_mover_is_seen_mid_sequence(self, sample_scene, sample_sequence):
        _, truth = sample_sequence
        assert truth.masks[sample_scene.n_frames // 2].any()

    def test_static_scene_has_empty_masks(self, static_sequence):
        _, truth = static_sequence
        assert not any(mask.any() for mask in truth.masks)

    def test_matches_land_inside_the_image(self, sample_sequence):
        _, truth = sample_sequence
        for matches in truth.matches[1:]:
            assert len(matches) > 0
            assert (matches.pixels_t2 >= -0.5).all()
            assert (matches.pixels_t2[:, 0] < SMALL_WIDTH - 0.5).all()
            assert (matches.pixels_t2[:, 1] < SMALL_HEIGHT - 0.5).all()

    def test_depth_dropout_clears_confidence(self):
        frames, _ = generate(small_scene(5, n_frames=2, depth_dropout=0.3))
        for frame in frames:
            invalid = ~frame.depth.valid
            assert 0.2 < invalid.mean() < 0.4
            assert (frame.confidence[invalid] == 0.0).all()

    def test_pose_noise_keeps_the_first_pose(self):
        frames, truth = generate(small_scene(5, n_frames=3, pose_sigma_rot=0.01, pose_sigma_trans=0.02))
        assert frames[0].init_pose == truth.poses[0]
        assert not np.allclose(frames[1].init_pose.matrix(), truth.poses[1].matrix())

    def test_camera_outside_the_room(self):
        cfg = small_scene(5, n_frames=1, n_movers=0)
        outside = Pose(np.eye(3), -np.array([100.0, 0.0, 0.0]))
        with pytest.raises(SceneGenerationError):
            generate(cfg.with_noise(camera_poses=(outside,)))


class TestNoise:
    def test_zero_noise_is_identity(self, rng):
        poses = [Pose(np.eye(3), rng.normal(size=3)) for _ in range(4)]
        for a, b in zip(perturb_poses(poses, 0.0, 0.0, seed=1), poses):
            np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-15)

    def test_first_pose_does_not_shift_the_draws(self):
        poses = [Pose.identity()] * 4
        kept = perturb_poses(poses, 0.01, 0.01, seed=3, keep_first=True)
        moved = perturb_poses(poses, 0.01, 0.01, seed=3, keep_first=False)
        assert kept[0] == Pose.identity()
        assert moved[0] != Pose.identity()
        assert kept[1:] == moved[1:]

    def test_noise_magnitude(self):
        poses = [Pose.identity()] * 2000
        noisy = perturb_poses(poses, 0.0, 0.05, seed=9, keep_first=False)
        translations = np.array([p.translation for p in noisy])
        assert translations.std(axis=0) == pytest.approx([0.05] * 3, rel=0.1)


class TestFeatures:
    def test_visual_descriptor(self, rng):
        image = rng.random((SMALL_HEIGHT, SMALL_WIDTH))
        feature = toy_visual_feature(image, np.ones(image.shape, dtype=bool))
        assert feature.dim == VISUAL_DIM
        assert feature.kind == "visual2d"
        assert np.linalg.norm(feature.values[256:]) == pytest.approx(1.0, rel=1e-5)

    def test_visual_ignores_dynamic_pixels(self, rng):
        image = rng.random((32, 32))
        static = np.ones(image.shape, dtype=bool)
        static[8:16, 8:16] = False
        changed = image.copy()
        changed[9:15, 9:15] = 0.0
        assert toy_visual_feature(image, static) == toy_visual_feature(changed, static)

    def test_visual_shape_mismatch(self):
        with pytest.raises(InputShapeError):
            toy_visual_feature(np.zeros((4, 4)), np.ones((4, 5), dtype=bool))

    def test_geo_descriptor(self, sample_cloud):
        feature = toy_geo_feature(sample_cloud)
        assert feature.dim == GEO_DIM
        assert feature.values.sum() == pytest.approx(1.0, rel=1e-5)
        shifted = PointCloud(sample_cloud.points + np.array([5.0, -2.0, 1.0]))
        np.testing.assert_allclose(toy_geo_feature(shifted).values, feature.values, atol=1e-6)

    def test_geo_needs_points(self):
        with pytest.raises(EmptyInputError):
            toy_geo_feature(PointCloud.empty())


class TestWriter:
    def test_layout(self, sample_sequence, sample_sequence_dir):
        frames, _ = sample_sequence
        names = {p.name for p in sample_sequence_dir.iterdir()}
        assert "intrinsics.txt" in names
        assert "000000.pose.txt" in names and "000000.depth.f32" in names
        assert "000000.flow.f32" not in names
        assert "000001.flow.f32" in names and "000001.matches.txt" in names
        assert (sample_sequence_dir / "gt" / "trajectory.tum").is_file()
        assert len(list((sample_sequence_dir / "gt" / "masks").iterdir())) == len(frames)

    def test_replaces_an_existing_sequence(self, tmp_path, static_sequence):
        frames, _ = static_sequence
        root = tmp_path / "seq"
        root.mkdir()
        (root / "stale.txt").write_text("old")
        write_sequence(frames[:2], root)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["seq"]
        assert not (root / "stale.txt").exists()
        assert not (root / "gt").exists()

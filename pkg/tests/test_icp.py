"""
Nearest-neighbour index and ICP tests
"""

import math

import numpy as np
import pytest

from cognimap.core.exceptions import EmptyInputError, InputValueError
from cognimap.geometry.se3 import se3_compose, se3_exp, se3_inverse, so3_exp, so3_log
from cognimap.icp.icp import alignment_statistics, icp_align, overlap_fractions, weighted_rigid_fit
from cognimap.icp.nn_index import build_nn_index
from cognimap.models.geometry_models import Pose
from cognimap.models.memory_models import PointCloud
from tests.conftest import structured_cloud


def _rotation_error(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(so3_log(a.rotation.T @ b.rotation)))


class TestNearestNeighborIndex:
    def test_exact_neighbours(self):
        cloud = PointCloud(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]))
        index = build_nn_index(cloud)
        distances, indices = index.query(np.array([[0.9, 0.1, 0.0], [0.0, 1.8, 0.0]]))
        assert indices.tolist() == [1, 2]
        np.testing.assert_allclose(distances, [math.hypot(0.1, 0.1), 0.2])

    def test_duplicates_answer_lowest_index(self):
        cloud = PointCloud(np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))
        _, indices = build_nn_index(cloud).query(np.array([1.0, 1.0, 1.1]))
        assert indices.tolist() == [0]

    def test_max_distance_gate(self):
        index = build_nn_index(PointCloud(np.zeros((1, 3))))
        distances, indices = index.query(np.array([[5.0, 0.0, 0.0]]), max_distance=1.0)
        assert indices.tolist() == [-1]
        assert math.isinf(distances[0])

    def test_empty_cloud(self):
        with pytest.raises(EmptyInputError):
            build_nn_index(PointCloud.empty())


class TestRigidFit:
    def test_recovers_transform(self, rng):
        source = rng.normal(size=(50, 3))
        truth = se3_exp(rng.normal(size=6))
        rotation, translation = weighted_rigid_fit(source, truth.apply(source))
        np.testing.assert_allclose(rotation, truth.rotation, atol=1e-10)
        np.testing.assert_allclose(translation, truth.translation, atol=1e-10)

    def test_zero_weights_ignore_outliers(self, rng):
        source = rng.normal(size=(40, 3))
        truth = se3_exp(np.array([0.1, -0.2, 0.3, 0.05, 0.1, -0.02]))
        target = truth.apply(source)
        target[:5] += 10.0
        weights = np.ones(40)
        weights[:5] = 0.0
        rotation, translation = weighted_rigid_fit(source, target, weights)
        np.testing.assert_allclose(rotation, truth.rotation, atol=1e-10)
        np.testing.assert_allclose(translation, truth.translation, atol=1e-10)

    def test_result_is_a_rotation(self, rng):
        # planar points admit a reflection; the fit must still return det +1
        source = np.column_stack([rng.normal(size=(30, 2)), np.zeros(30)])
        rotation, _ = weighted_rigid_fit(source, source[:, [1, 0, 2]])
        assert np.linalg.det(rotation) == pytest.approx(1.0)


class TestIcp:
    def test_identity_alignment_is_exact(self, sample_cloud):
        result = icp_align(sample_cloud, sample_cloud)
        np.testing.assert_allclose(result.transform.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(result.transform.translation, np.zeros(3), atol=1e-9)
        assert result.inlier_count == len(sample_cloud)
        assert result.rmse == pytest.approx(0.0, abs=1e-9)
        assert not result.accepted

    def test_recovers_moderate_offset(self, sample_cloud):
        diameter = sample_cloud.diameter()
        axis = np.array([0.3, 1.0, 0.2]) / np.linalg.norm([0.3, 1.0, 0.2])
        direction = np.array([1.0, 0.5, -0.5]) / np.linalg.norm([1.0, 0.5, -0.5])
        truth = Pose(so3_exp(axis * math.radians(10.0)), direction * 0.1 * diameter)
        source = sample_cloud.transformed(se3_inverse(truth))

        result = icp_align(source, sample_cloud, max_iter=200, corr_dist=0.3 * diameter)
        assert _rotation_error(result.transform, truth) < 1e-3
        assert np.linalg.norm(result.transform.translation - truth.translation) < 1e-3 * diameter
        assert result.inlier_count >= 0.95 * len(sample_cloud)

    def test_mean_distance_decreases(self, sample_cloud):
        diameter = sample_cloud.diameter()
        truth = se3_exp(np.array([0.02, 0.01, 0.0, 0.0, 0.05, 0.0]))
        source = sample_cloud.transformed(se3_inverse(truth))
        result = icp_align(source, sample_cloud, corr_dist=0.3 * diameter)
        assert len(result.mean_distances) >= 2
        assert result.mean_distances[-1] < result.mean_distances[0]

    def test_init_is_used(self, sample_cloud):
        truth = se3_exp(np.array([0.5, 0.0, 0.0, 0.0, 0.3, 0.0]))
        source = sample_cloud.transformed(se3_inverse(truth))
        result = icp_align(source, sample_cloud, init=truth)
        assert _rotation_error(result.transform, truth) < 1e-9
        assert result.iterations <= 2

    def test_no_correspondences(self, sample_cloud):
        far = sample_cloud.transformed(Pose(np.eye(3), np.array([100.0, 0.0, 0.0])))
        result = icp_align(far, sample_cloud)
        assert result.reason.startswith("only 0 correspondences")
        assert result.inlier_count == 0
        assert math.isinf(result.rmse)
        assert result.transform == Pose.identity()

    def test_too_few_points(self, sample_cloud):
        with pytest.raises(InputValueError):
            icp_align(PointCloud(np.zeros((2, 3))), sample_cloud)

    def test_inliers_count_distinct_targets(self, rng):
        target = structured_cloud(rng, n=100)
        doubled = target.concatenate(target)
        count, rmse = alignment_statistics(doubled, build_nn_index(target), Pose.identity(), 0.01)
        assert count == len(target)
        assert rmse == 0.0

    def test_composed_transform_stays_orthonormal(self, sample_cloud):
        truth = se3_compose(se3_exp(np.array([0.0, 0.1, 0.0, 0.1, 0.0, 0.0])),
                            se3_exp(np.array([0.05, 0.0, 0.0, 0.0, 0.0, 0.1])))
        result = icp_align(sample_cloud.transformed(se3_inverse(truth)), sample_cloud,
                           corr_dist=0.3 * sample_cloud.diameter())
        assert result.transform.is_valid()

    @pytest.mark.slow
    def test_recovers_seeded_perturbations(self, sample_cloud):
        diameter = sample_cloud.diameter()
        for trial in range(50):
            rng = np.random.default_rng(trial)
            axis = rng.normal(size=3)
            direction = rng.normal(size=3)
            truth = Pose(so3_exp(axis / np.linalg.norm(axis) * math.radians(rng.uniform(0.0, 10.0))),
                         direction / np.linalg.norm(direction) * rng.uniform(0.0, 0.1) * diameter)
            source = sample_cloud.transformed(se3_inverse(truth))
            result = icp_align(source, sample_cloud, max_iter=200, corr_dist=0.3 * diameter)
            assert math.degrees(_rotation_error(result.transform, truth)) < 0.5, trial
            assert np.linalg.norm(result.transform.translation - truth.translation) < 0.01 * diameter, trial


class TestOverlap:
    def test_identical_clouds_cover_each_other(self, sample_cloud):
        assert overlap_fractions(sample_cloud, sample_cloud, Pose.identity(), 0.01) == (1.0, 1.0)

    def test_half_cloud_is_fully_covered_on_both_sides(self, sample_cloud):
        half = PointCloud(sample_cloud.points[sample_cloud.points[:, 0] < 0.0])
        forward, backward = overlap_fractions(half, sample_cloud, Pose.identity(), 0.05)
        assert forward == 1.0
        assert backward > 0.9

    def test_unrelated_points_inside_the_bounds_count_against(self, rng):
        shared = rng.uniform(-1.0, 1.0, (200, 3))
        target = PointCloud(np.vstack([shared, rng.uniform(-1.0, 1.0, (200, 3))]))
        forward, backward = overlap_fractions(PointCloud(shared), target, Pose.identity(), 1e-6)
        assert forward == 1.0
        assert backward == pytest.approx(0.5, abs=0.05)

    def test_disjoint_clouds(self, sample_cloud):
        far = Pose(np.eye(3), np.array([100.0, 0.0, 0.0]))
        assert overlap_fractions(sample_cloud, sample_cloud, far, 0.1) == (0.0, 0.0)

"""
Camera model, SE(3) and ego-flow tests
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cognimap.core.exceptions import InputShapeError, InputValueError
from cognimap.geometry.camera import project, to_world, unproject
from cognimap.geometry.ego_flow import ego_flow
from cognimap.geometry.se3 import (
    orthonormalize,
    se3_adjoint,
    se3_compose,
    se3_diff,
    se3_exp,
    se3_inverse,
    se3_log,
    se3_retract,
    so3_exp,
)
from cognimap.models.geometry_models import DepthMap, Intrinsics, Pose

finite = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)
twists = st.lists(finite, min_size=6, max_size=6).map(np.array).filter(
    lambda xi: np.linalg.norm(xi[3:]) < np.pi - 1e-3
)


def _close_pose(a: Pose, b: Pose, atol: float = 1e-9) -> bool:
    return np.allclose(a.rotation, b.rotation, atol=atol) and np.allclose(a.translation, b.translation, atol=atol)


class TestIntrinsics:
    def test_rejects_non_positive_focal(self):
        with pytest.raises(InputValueError):
            Intrinsics(fx=0.0, fy=1.0, cx=1.0, cy=1.0, width=4, height=4)

    def test_rejects_principal_point_outside(self):
        with pytest.raises(InputValueError):
            Intrinsics(fx=1.0, fy=1.0, cx=4.0, cy=1.0, width=4, height=4)

    def test_centered(self):
        k = Intrinsics.centered(64, 48, 50.0)
        assert (k.cx, k.cy) == (31.5, 23.5)
        assert k.shape == (48, 64)


class TestProjection:
    def test_principal_point_ray(self, sample_intrinsics):
        depth = np.zeros((480, 640))
        depth[240, 320] = 2.0
        points = unproject(DepthMap.from_values(depth), sample_intrinsics)
        np.testing.assert_allclose(points.points[240, 320], [0.0, 0.0, 2.0])
        assert points.valid.sum() == 1
        assert np.isnan(points.points[0, 0]).all()

    def test_unit_tangent(self, sample_intrinsics):
        depth = np.zeros((480, 640))
        depth[240, 420] = 1.0
        points = unproject(DepthMap.from_values(depth), sample_intrinsics)
        np.testing.assert_allclose(points.points[240, 420], [1.0, 0.0, 1.0])

    def test_shape_mismatch(self, sample_intrinsics):
        with pytest.raises(InputShapeError):
            unproject(DepthMap.from_values(np.ones((10, 10))), sample_intrinsics)

    def test_optical_axis(self, sample_intrinsics):
        pixels, behind = project(np.array([0.0, 0.0, 5.0]), sample_intrinsics)
        np.testing.assert_allclose(pixels, [320.0, 240.0])
        assert not behind

    def test_analytic_pinhole(self, sample_intrinsics):
        pixels, _ = project(np.array([1.0, 0.0, 1.0]), sample_intrinsics)
        np.testing.assert_allclose(pixels, [420.0, 240.0])

    def test_behind_camera_flag(self, sample_intrinsics):
        pixels, behind = project(np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1e-9]]), sample_intrinsics)
        assert behind.all()
        assert np.isnan(pixels).all()

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 31 - 1))
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        width, height = int(rng.integers(8, 64)), int(rng.integers(8, 64))
        k = Intrinsics(fx=rng.uniform(20, 200), fy=rng.uniform(20, 200),
                       cx=rng.uniform(0, width - 1), cy=rng.uniform(0, height - 1),
                       width=width, height=height)
        depth = rng.uniform(0.1, 20.0, (height, width))
        points = unproject(DepthMap.from_values(depth), k)
        pixels, behind = project(points.points, k)
        ys, xs = np.mgrid[0:height, 0:width]
        assert not behind.any()
        np.testing.assert_allclose(pixels[..., 0], xs, atol=1e-6)
        np.testing.assert_allclose(pixels[..., 1], ys, atol=1e-6)

    def test_to_world_inverts_pose(self, rng):
        k = Intrinsics.centered(16, 12, 20.0)
        pose = se3_exp(rng.normal(size=6) * 0.3)
        points = unproject(DepthMap.from_values(rng.uniform(1.0, 3.0, (12, 16))), k)
        world = to_world(points, pose)
        np.testing.assert_allclose(pose.apply(world.points.reshape(-1, 3)), points.points.reshape(-1, 3), atol=1e-12)


class TestSE3:
    def test_exp_zero_is_identity(self):
        assert _close_pose(se3_exp(np.zeros(6)), Pose.identity(), atol=1e-15)

    def test_diff_to_self_is_zero(self, rng):
        pose = se3_exp(rng.normal(size=6))
        np.testing.assert_allclose(se3_diff(pose, pose), np.zeros(6), atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(xi=twists)
    def test_log_exp_round_trip(self, xi):
        np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(a=twists, b=twists, c=twists)
    def test_group_laws(self, a, b, c):
        ta, tb, tc = se3_exp(a), se3_exp(b), se3_exp(c)
        left = se3_compose(se3_compose(ta, tb), tc)
        right = se3_compose(ta, se3_compose(tb, tc))
        assert _close_pose(left, right)
        assert _close_pose(se3_compose(ta, se3_inverse(ta)), Pose.identity())
        assert left.is_valid()

    def test_log_near_pi_is_stable(self):
        axis = np.array([1.0, 2.0, -0.5]) / np.linalg.norm([1.0, 2.0, -0.5])
        pose = Pose(so3_exp(axis * (np.pi - 1e-13)), np.array([0.1, 0.2, 0.3]))
        xi = se3_log(pose)
        assert np.all(np.isfinite(xi))
        assert _close_pose(se3_exp(xi), pose, atol=1e-6)

    def test_retract_is_left_perturbation(self, rng):
        pose = se3_exp(rng.normal(size=6))
        delta = rng.normal(size=6) * 1e-2
        expected = se3_compose(se3_exp(delta), pose)
        assert _close_pose(se3_retract(pose, delta), expected, atol=1e-12)

    def test_retract_reorthonormalizes(self):
        skewed = Pose(np.eye(3) + 1e-4 * np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), np.zeros(3))
        assert skewed.orthonormality_error() > 1e-9
        assert se3_retract(skewed, np.zeros(6)).is_valid()

    def test_orthonormalize_keeps_rotation(self, rng):
        rotation = so3_exp(rng.normal(size=3))
        np.testing.assert_allclose(orthonormalize(rotation), rotation, atol=1e-12)

    def test_adjoint(self, rng):
        pose = se3_exp(rng.normal(size=6))
        xi = rng.normal(size=6) * 0.1
        lhs = se3_exp(se3_adjoint(pose) @ xi)
        rhs = se3_compose(se3_compose(pose, se3_exp(xi)), se3_inverse(pose))
        assert _close_pose(lhs, rhs, atol=1e-9)


class TestEgoFlow:
    def test_identical_poses_give_zero_flow(self, rng):
        k = Intrinsics.centered(32, 24, 30.0)
        pose = se3_exp(rng.normal(size=6))
        flow, valid = ego_flow(DepthMap.from_values(rng.uniform(1, 4, (24, 32))), k, k, pose, pose)
        assert valid.all()
        np.testing.assert_allclose(flow.u, 0.0, atol=1e-9)
        np.testing.assert_allclose(flow.v, 0.0, atol=1e-9)

    def test_lateral_parallax(self):
        k = Intrinsics.centered(32, 24, 30.0)
        d, tx = 4.0, 0.2
        # camera moves +tx along world x, so static points shift towards -x in the image
        e_t2 = Pose(np.eye(3), np.array([-tx, 0.0, 0.0]))
        flow, valid = ego_flow(DepthMap.from_values(np.full((24, 32), d)), k, k, Pose.identity(), e_t2)
        expected = -k.fx * tx / d
        np.testing.assert_allclose(flow.u[valid], expected, atol=1e-12)
        np.testing.assert_allclose(flow.v[valid], 0.0, atol=1e-12)
        assert not valid[:, 0].any()

    def test_invalid_depth_is_invalid(self):
        k = Intrinsics.centered(8, 6, 10.0)
        depth = np.ones((6, 8))
        depth[2, 3] = 0.0
        flow, valid = ego_flow(DepthMap.from_values(depth), k, k, Pose.identity(), Pose.identity())
        assert not valid[2, 3]
        assert flow.u[2, 3] == 0.0

    def test_matches_rendered_flow_on_static_pixels(self, static_sequence):
        frames, truth = static_sequence
        k = frames[0].intrinsics
        for i in range(1, len(frames)):
            expected, valid = ego_flow(truth.depth[i - 1], k, k, truth.poses[i - 1], truth.poses[i])
            residual = np.hypot(truth.flow[i].u - expected.u, truth.flow[i].v - expected.v)
            assert residual[valid].max() < 1e-6

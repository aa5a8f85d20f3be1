"""
Levenberg-Marquardt solver for the pose/landmark factor graph

Total cost: half the squared whitened prior and motion residuals plus the
Huber cost of every active observation. An observation stacks its whitened
reprojection error and, when a depth was measured, its whitened depth error;
the Huber kernel applies to the norm of that stacked vector.

Each iteration solves the IRLS-weighted normal equations with Marquardt
damping, eliminating the landmarks through their 3x3 blocks (Schur
complement) and solving the reduced pose system with a sparse factorisation.
"""

import copy
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from cognimap.core.exceptions import SolverError
from cognimap.geometry.camera import DEFAULT_BEHIND_EPS
from cognimap.geometry.se3 import se3_retract
from cognimap.models.geometry_models import Pose
from cognimap.models.graph_models import FactorGraphProblem, SolveReport, SolveResult
from cognimap.posegraph.factors import (
    batch_depth,
    batch_projection,
    huber_arrays,
    motion_jacobians,
    prior_jacobian,
    residual_motion,
    residual_prior,
    whitener,
)

logger = logging.getLogger(__name__)

BEHIND_PENALTY_FACTOR = 10.0
ZERO_COST = 1e-30
LAMBDA_FLOOR = 1e-15
_BLOCK = np.arange(6)


class _Singular(Exception):
    pass


@dataclass
class _Linearization:
    hpp_diag: np.ndarray        # N x 6 x 6
    motion_blocks: List[Tuple[int, int, np.ndarray]]
    gp: np.ndarray              # N x 6
    hll: np.ndarray             # Mf x 3 x 3
    gl: np.ndarray              # Mf x 3
    hpl: np.ndarray             # K' x 6 x 3
    hpl_pose: np.ndarray        # K'
    hpl_landmark: np.ndarray    # K' (free-landmark index)


def _block_coo(blocks: np.ndarray, bi: np.ndarray, bj: np.ndarray, size: int):
    rows = (6 * bi)[:, None, None] + _BLOCK[None, :, None]
    cols = (6 * bj)[:, None, None] + _BLOCK[None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    return rows.ravel(), cols.ravel(), blocks.ravel()


class LevenbergMarquardtSolver:
    """
    One solve over a FactorGraphProblem

    The problem is copied; results come back as a SolveResult.
    """

    def __init__(
        self,
        problem: FactorGraphProblem,
        max_iter: int = 100,
        lambda_init: float = 1e-3,
        lambda_max: float = 1e8,
        outer_iterations: int = 3,
        outlier_factor: float = 3.0,
        rel_tol: float = 1e-8,
        step_tol: float = 1e-8,
        eps_z: float = DEFAULT_BEHIND_EPS,
    ):
        problem.validate()
        self.problem = problem
        self.max_iter = max_iter
        self.lambda_init = lambda_init
        self.lambda_max = lambda_max
        self.outer_iterations = outer_iterations
        self.outlier_factor = outlier_factor
        self.rel_tol = rel_tol
        self.step_tol = step_tol
        self.eps_z = eps_z
        self.delta = problem.huber_delta

        self.n_poses = len(problem.poses)
        self.init_poses = list(problem.init_poses)
        k = problem.intrinsics
        self.fx = np.array([c.fx for c in k])
        self.fy = np.array([c.fy for c in k])
        self.cx = np.array([c.cx for c in k])
        self.cy = np.array([c.cy for c in k])

        index = problem.landmark_index()
        self.fixed = np.array([lm.fixed for lm in problem.landmarks], dtype=bool)
        self.free_of = np.full(len(problem.landmarks), -1, dtype=np.int64)
        self.free_of[~self.fixed] = np.arange(int(np.count_nonzero(~self.fixed)))
        self.n_free = int(np.count_nonzero(~self.fixed))

        obs = problem.observations
        self.obs_frame = np.array([o.frame for o in obs], dtype=np.int64)
        self.obs_landmark = np.array([index[o.landmark] for o in obs], dtype=np.int64)
        self.obs_pixel = np.array([o.pixel for o in obs], dtype=np.float64).reshape(-1, 2)
        self.obs_white = np.array([whitener(o.sigma) for o in obs], dtype=np.float64).reshape(-1, 2, 2)
        self.active = np.array([o.active for o in obs], dtype=bool)
        self.obs_depth = np.array([o.depth if o.has_depth else np.nan for o in obs], dtype=np.float64)
        self.depth_white = np.array([1.0 / o.depth_sigma if o.has_depth else 0.0 for o in obs], dtype=np.float64)

        self.w_prior = whitener(problem.sigma_prior)
        self.w_motion = whitener(problem.sigma_motion)
        self.behind_penalty = float(huber_arrays(np.array([BEHIND_PENALTY_FACTOR * self.delta]), self.delta)[0][0])

    # Evaluation

    def _projection(self, poses: List[Pose], points: np.ndarray, with_jacobians: bool):
        rot = np.array([p.rotation for p in poses])
        trans = np.array([p.translation for p in poses])
        f = self.obs_frame
        residual, behind, j_pose, j_point = batch_projection(
            rot[f], trans[f], points[self.obs_landmark],
            self.fx[f], self.fy[f], self.cx[f], self.cy[f], self.obs_pixel,
            eps_z=self.eps_z, with_jacobians=with_jacobians,
        )
        residual = np.einsum("kij,kj->ki", self.obs_white, residual)
        if with_jacobians:
            j_pose = np.einsum("kij,kjl->kil", self.obs_white, j_pose)
            j_point = np.einsum("kij,kjl->kil", self.obs_white, j_point)
        if not self.depth_white.any():
            return residual, behind, j_pose, j_point

        r_depth, jd_pose, jd_point = batch_depth(rot[f], trans[f], points[self.obs_landmark], self.obs_depth,
                                                 eps_z=self.eps_z)
        residual = np.concatenate([residual, (self.depth_white * r_depth)[:, None]], axis=1)
        if with_jacobians:
            j_pose = np.concatenate([j_pose, (self.depth_white[:, None] * jd_pose)[:, None, :]], axis=1)
            j_point = np.concatenate([j_point, (self.depth_white[:, None] * jd_point)[:, None, :]], axis=1)
        return residual, behind, j_pose, j_point

    def _cost(self, poses: List[Pose], points: np.ndarray, active: np.ndarray) -> float:
        residual, behind, _, _ = self._projection(poses, points, with_jacobians=False)
        use = active & ~behind
        if not np.all(np.isfinite(residual[use])):
            bad = int(np.flatnonzero(use & ~np.all(np.isfinite(residual), axis=1))[0])
            raise SolverError("non-finite residual", factor=f"projection[{bad}]")
        norms = np.linalg.norm(residual, axis=1)
        proj_cost, _ = huber_arrays(norms[use], self.delta)
        cost = float(proj_cost.sum()) + self.behind_penalty * int(np.count_nonzero(active & behind))

        r0 = self.w_prior @ residual_prior(poses[0], self.init_poses[0])
        if not np.all(np.isfinite(r0)):
            raise SolverError("non-finite residual", factor="prior")
        cost += 0.5 * float(r0 @ r0)
        for i in range(1, self.n_poses):
            r = self.w_motion @ residual_motion(poses[i - 1], poses[i], self.init_poses[i - 1], self.init_poses[i])
            if not np.all(np.isfinite(r)):
                raise SolverError("non-finite residual", factor=f"motion[{i - 1},{i}]")
            cost += 0.5 * float(r @ r)
        return cost

    def _linearize(self, poses: List[Pose], points: np.ndarray, active: np.ndarray) -> _Linearization:
        n = self.n_poses
        residual, behind, j_pose, j_point = self._projection(poses, points, with_jacobians=True)
        norms = np.linalg.norm(residual, axis=1)
        _, weight = huber_arrays(norms, self.delta)
        weight = np.where(active & ~behind, weight, 0.0)

        hpp_diag = np.zeros((n, 6, 6))
        gp = np.zeros((n, 6))
        wj_pose = j_pose * weight[:, None, None]
        np.add.at(hpp_diag, self.obs_frame, np.einsum("kri,krj->kij", wj_pose, j_pose))
        np.add.at(gp, self.obs_frame, np.einsum("kri,kr->ki", wj_pose, residual))

        free = self.free_of[self.obs_landmark]
        use = (free >= 0) & (weight > 0.0)
        hll = np.zeros((self.n_free, 3, 3))
        gl = np.zeros((self.n_free, 3))
        wj_point = j_point[use] * weight[use][:, None, None]
        np.add.at(hll, free[use], np.einsum("kri,krj->kij", wj_point, j_point[use]))
        np.add.at(gl, free[use], np.einsum("kri,kr->ki", wj_point, residual[use]))
        hpl = np.einsum("kri,krj->kij", wj_pose[use], j_point[use])

        j0 = self.w_prior @ prior_jacobian(poses[0], self.init_poses[0])
        r0 = self.w_prior @ residual_prior(poses[0], self.init_poses[0])
        hpp_diag[0] += j0.T @ j0
        gp[0] += j0.T @ r0

        motion_blocks = []
        for i in range(1, n):
            a, b = motion_jacobians(poses[i - 1], poses[i], self.init_poses[i - 1], self.init_poses[i])
            a = self.w_motion @ a
            b = self.w_motion @ b
            r = self.w_motion @ residual_motion(poses[i - 1], poses[i], self.init_poses[i - 1], self.init_poses[i])
            hpp_diag[i - 1] += a.T @ a
            hpp_diag[i] += b.T @ b
            motion_blocks.append((i - 1, i, a.T @ b))
            gp[i - 1] += a.T @ r
            gp[i] += b.T @ r

        return _Linearization(hpp_diag, motion_blocks, gp, hll, gl, hpl,
                              self.obs_frame[use], free[use])

    # Step

    def _step(self, lin: _Linearization, lam: float) -> Tuple[np.ndarray, np.ndarray]:
        n = self.n_poses
        size = 6 * n

        hll = lin.hll.copy()
        idle = np.trace(hll, axis1=1, axis2=2) <= 1e-12
        hll[idle] = np.eye(3)
        diag_l = np.diagonal(hll, axis1=1, axis2=2)
        hll[:, [0, 1, 2], [0, 1, 2]] += lam * np.maximum(diag_l, 1e-12)
        try:
            hll_inv = np.linalg.inv(hll)
        except np.linalg.LinAlgError as e:
            raise _Singular(str(e)) from e

        hpp = lin.hpp_diag.copy()
        diag_p = np.diagonal(hpp, axis1=1, axis2=2)
        hpp[:, _BLOCK, _BLOCK] += lam * np.maximum(diag_p, 1e-12)

        rows, cols, data = [], [], []
        r, c, d = _block_coo(hpp, np.arange(n), np.arange(n), size)
        rows.append(r), cols.append(c), data.append(d)
        if lin.motion_blocks:
            bi = np.array([m[0] for m in lin.motion_blocks])
            bj = np.array([m[1] for m in lin.motion_blocks])
            blocks = np.array([m[2] for m in lin.motion_blocks])
            for (x, y, blk) in ((bi, bj, blocks), (bj, bi, np.transpose(blocks, (0, 2, 1)))):
                r, c, d = _block_coo(blk, x, y, size)
                rows.append(r), cols.append(c), data.append(d)

        rhs = -lin.gp.copy()
        y = np.zeros((0, 6, 3))
        if lin.hpl.shape[0]:
            y = np.einsum("kij,kjl->kil", lin.hpl, hll_inv[lin.hpl_landmark])
            np.add.at(rhs, lin.hpl_pose, np.einsum("kij,kj->ki", y, lin.gl[lin.hpl_landmark]))

            order = np.argsort(lin.hpl_landmark, kind="stable")
            groups = lin.hpl_landmark[order]
            starts = np.flatnonzero(np.r_[True, groups[1:] != groups[:-1]])
            sizes = np.diff(np.r_[starts, groups.shape[0]])
            size_of = np.repeat(sizes, sizes)
            start_of = np.repeat(starts, sizes)
            left = np.repeat(order, size_of)
            offsets = np.arange(left.shape[0]) - np.repeat(np.cumsum(size_of) - size_of, size_of)
            right = order[np.repeat(start_of, size_of) + offsets]
            schur = -np.einsum("kij,klj->kil", y[left], lin.hpl[right])
            r, c, d = _block_coo(schur, lin.hpl_pose[left], lin.hpl_pose[right], size)
            rows.append(r), cols.append(c), data.append(d)

        system = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
        ).tocsc()
        delta_p = np.asarray(spsolve(system, rhs.reshape(-1))).reshape(n, 6)
        if not np.all(np.isfinite(delta_p)):
            raise _Singular("reduced pose system is singular")

        rhs_l = -lin.gl.copy()
        if lin.hpl.shape[0]:
            np.add.at(rhs_l, lin.hpl_landmark, -np.einsum("kij,ki->kj", lin.hpl, delta_p[lin.hpl_pose]))
        delta_l = np.einsum("kij,kj->ki", hll_inv, rhs_l)
        delta_l[idle] = 0.0
        if not np.all(np.isfinite(delta_l)):
            raise _Singular("landmark blocks are singular")
        return delta_p, delta_l

    def _apply(self, poses: List[Pose], points: np.ndarray, delta_p: np.ndarray,
               delta_l: np.ndarray) -> Tuple[List[Pose], np.ndarray]:
        new_poses = [se3_retract(pose, delta_p[i]) for i, pose in enumerate(poses)]
        new_points = points.copy()
        new_points[~self.fixed] += delta_l
        return new_poses, new_points

    # Loops

    def _levenberg_marquardt(self, poses, points, active, report: SolveReport):
        cost = self._cost(poses, points, active)
        costs = [cost]
        lam = self.lambda_init
        lin: Optional[_Linearization] = None
        termination = "max_iter"
        converged = False
        singular_failures = 0

        for _ in range(self.max_iter):
            report.iterations += 1
            if cost <= ZERO_COST:
                termination, converged = "zero cost", True
                break
            if lin is None:
                lin = self._linearize(poses, points, active)
            try:
                delta_p, delta_l = self._step(lin, lam)
            except _Singular as e:
                singular_failures += 1
                lam *= 10.0
                if lam > self.lambda_max:
                    raise SolverError(f"normal equations stay singular after damping: {e}", factor="schur")
                continue

            step_norm = float(np.sqrt(np.sum(delta_p ** 2) + np.sum(delta_l ** 2)))
            new_poses, new_points = self._apply(poses, points, delta_p, delta_l)
            new_cost = self._cost(new_poses, new_points, active)
            if new_cost < cost:
                relative = (cost - new_cost) / cost
                poses, points, cost = new_poses, new_points, new_cost
                costs.append(cost)
                lin = None
                lam = max(lam / 10.0, LAMBDA_FLOOR)
                if relative < self.rel_tol:
                    termination, converged = "relative decrease", True
                    break
                if step_norm < self.step_tol:
                    termination, converged = "small step", True
                    break
            else:
                report.rejected_steps += 1
                lam *= 10.0
                if step_norm < self.step_tol:
                    termination, converged = "small step", True
                    break
                if lam > self.lambda_max:
                    termination, converged = "damping limit", True
                    break

        if singular_failures:
            logger.debug(f"Solver recovered from {singular_failures} singular solve(s)")
        report.costs.append(costs)
        report.termination = termination
        report.converged = converged
        report.final_lambda = lam
        return poses, points

    def _reselect(self, poses, points, active) -> np.ndarray:
        residual, behind, _, _ = self._projection(poses, points, with_jacobians=False)
        norms = np.linalg.norm(residual, axis=1)
        considered = active & ~behind
        if not considered.any():
            return active
        threshold = max(self.outlier_factor * float(np.median(norms[considered])), self.delta)
        return np.where(behind, active, norms <= threshold)

    def run(self) -> SolveResult:
        report = SolveReport()
        poses = list(self.problem.poses)
        points = np.array([lm.position for lm in self.problem.landmarks], dtype=np.float64).reshape(-1, 3)
        active = self.active.copy()

        for round_index in range(self.outer_iterations):
            poses, points = self._levenberg_marquardt(poses, points, active, report)
            if round_index == self.outer_iterations - 1 or len(active) == 0:
                break
            selected = self._reselect(poses, points, active)
            if np.array_equal(selected, active):
                break
            logger.debug(f"Outlier round {round_index + 1}: {int(np.count_nonzero(~selected))} observations inactive")
            active = selected

        _, behind, _, _ = self._projection(poses, points, with_jacobians=False)
        report.behind_camera = int(np.count_nonzero(active & behind))
        report.deactivated = int(np.count_nonzero(~active))
        if report.deactivated or report.behind_camera:
            logger.warning(
                f"Solver left {report.deactivated} observation(s) deactivated as outliers, "
                f"{report.behind_camera} behind the camera"
            )

        landmarks = copy.deepcopy(self.problem.landmarks)
        for lm, position in zip(landmarks, points):
            lm.position = position.copy()
        observations = copy.deepcopy(self.problem.observations)
        for obs, flag in zip(observations, active):
            obs.active = bool(flag)
        return SolveResult(poses=poses, landmarks=landmarks, observations=observations, report=report)


def solve(
    problem: FactorGraphProblem,
    max_iter: int = 100,
    lambda_init: float = 1e-3,
    lambda_max: float = 1e8,
    outer_iterations: int = 3,
    outlier_factor: float = 3.0,
    eps_z: float = DEFAULT_BEHIND_EPS,
) -> SolveResult:
    """
    Refine poses and landmarks

    Raises:
        SolverError: a residual became non-finite (naming the factor) or the
            normal equations stayed singular at maximum damping
    """
    solver = LevenbergMarquardtSolver(problem, max_iter=max_iter, lambda_init=lambda_init, lambda_max=lambda_max,
                                      outer_iterations=outer_iterations, outlier_factor=outlier_factor, eps_z=eps_z)
    result = solver.run()
    logger.debug(
        f"Solve finished: {result.report.termination}, cost {result.report.initial_cost:.6g} -> "
        f"{result.report.final_cost:.6g} in {result.report.iterations} iterations"
    )
    return result

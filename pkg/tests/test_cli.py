"""
Evaluation metric and command-line tests
"""

import json

import numpy as np
import pytest

from cognimap.cli.main import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from cognimap.cli.metrics import ate, mask_iou, mean_mask_iou, relative_errors, rpe, umeyama
from cognimap.core.exceptions import DegenerateInputError, InputShapeError
from cognimap.geometry.se3 import se3_compose, se3_diff, se3_exp, so3_exp
from cognimap.models.geometry_models import Pose
from cognimap.posegraph.trajectory_io import read_tum


def _trajectory(rng, n=50):
    poses = [Pose.identity()]
    for _ in range(n - 1):
        poses.append(se3_compose(se3_exp(np.concatenate([rng.normal(0, 0.1, 3), rng.normal(0, 0.03, 3)])),
                                 poses[-1]))
    return poses


def _with_centers(poses, centers):
    return [Pose(p.rotation, -p.rotation @ c) for p, c in zip(poses, centers)]


class TestTrajectoryMetrics:
    def test_umeyama_recovers_a_rigid_motion(self, rng):
        source = rng.normal(size=(30, 3))
        rotation = so3_exp(np.array([0.2, -0.4, 0.1]))
        translation = np.array([1.0, 2.0, -0.5])
        r, t = umeyama(source, source @ rotation.T + translation)
        np.testing.assert_allclose(r, rotation, atol=1e-10)
        np.testing.assert_allclose(t, translation, atol=1e-10)

    def test_ate_of_noisy_centers(self, rng):
        gt = _trajectory(rng)
        sigma = 0.05
        centers = np.array([p.center for p in gt]) + rng.normal(0, sigma / np.sqrt(3), (len(gt), 3))
        assert 0.7 * sigma <= ate(_with_centers(gt, centers), gt) <= 1.3 * sigma

    def test_ate_ignores_a_rigid_change_of_world(self, rng):
        gt = _trajectory(rng)
        world = se3_exp(np.array([3.0, -1.0, 2.0, 0.3, 0.2, -0.5]))
        moved = [se3_compose(pose, world) for pose in gt]
        assert ate(moved, gt) == pytest.approx(0.0, abs=1e-9)

    def test_rpe_counts_a_corrupted_pose_twice(self, rng):
        gt = _trajectory(rng, n=20)
        est = list(gt)
        est[10] = se3_compose(se3_exp(np.array([0.2, 0.0, 0.0, 0.0, 0.0, 0.0])), gt[10])
        trans, rot = relative_errors(est, gt)
        assert np.flatnonzero(trans > 1e-9).tolist() == [9, 10]
        assert (rot < 1e-6).all()
        meters, degrees = rpe(est, gt)
        assert meters == pytest.approx(np.sqrt(2 * 0.2 ** 2 / 19), rel=1e-6)
        assert degrees == pytest.approx(0.0, abs=1e-6)

    def test_rpe_frame_gap(self, rng):
        gt = _trajectory(rng, n=5)
        assert rpe(gt, gt, delta=4) == pytest.approx((0.0, 0.0), abs=1e-9)
        with pytest.raises(DegenerateInputError):
            rpe(gt, gt, delta=5)

    def test_rpe_translation_is_the_relative_offset(self):
        gt = [Pose.identity(), Pose.identity()]
        est = [Pose.identity(), Pose(so3_exp(np.array([0.0, 0.0, 0.5])), np.array([1.0, 0.0, 0.0]))]
        trans, rot = relative_errors(est, gt)
        assert trans[0] == pytest.approx(1.0)
        assert rot[0] == pytest.approx(np.degrees(0.5))
        # the twist's translation part is bent by the rotation
        assert np.linalg.norm(se3_diff(gt[1], est[1])[:3]) != pytest.approx(1.0)

    def test_length_checks(self, rng):
        gt = _trajectory(rng, n=5)
        with pytest.raises(InputShapeError):
            ate(gt[:4], gt)
        with pytest.raises(DegenerateInputError):
            ate(gt[:1], gt[:1])


class TestMaskMetrics:
    def test_half_overlap(self):
        pred = np.zeros((4, 8), dtype=bool)
        gt = np.zeros((4, 8), dtype=bool)
        pred[:, 0:4] = True
        gt[:, 2:6] = True
        assert mask_iou(pred, gt) == pytest.approx(1.0 / 3.0)

    def test_both_empty(self):
        empty = np.zeros((3, 3), dtype=bool)
        assert mask_iou(empty, empty) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(InputShapeError):
            mask_iou(np.zeros((3, 3)), np.zeros((3, 4)))

    def test_mean(self):
        full = np.ones((2, 2), dtype=bool)
        empty = np.zeros((2, 2), dtype=bool)
        assert mean_mask_iou([full, empty], [full, full]) == pytest.approx(0.5)
        assert mean_mask_iou([], []) is None


class TestCommands:
    def test_version(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert "cognimap" in capsys.readouterr().out

    def test_missing_command(self):
        assert main([]) == EXIT_USAGE

    def test_synth(self, tmp_path):
        out = tmp_path / "seq"
        assert main(["synth", str(out), "--frames", "3", "--width", "64", "--height", "48", "--seed", "4"]) == EXIT_OK
        assert len(list(out.glob("*.pose.txt"))) == 3
        assert (out / "gt" / "trajectory.tum").is_file()

    def test_segment(self, tmp_path, sample_sequence_dir):
        out = tmp_path / "masks"
        assert main(["segment", str(sample_sequence_dir), str(out)]) == EXIT_OK
        assert len(list(out.glob("*.pgm"))) == len(list(sample_sequence_dir.glob("*.pose.txt")))

    def test_optimize(self, tmp_path, sample_sequence_dir):
        out = tmp_path / "trajectory.tum"
        assert main(["optimize", str(sample_sequence_dir), str(out)]) == EXIT_OK
        stamps, _ = read_tum(out)
        assert len(stamps) == len(list(sample_sequence_dir.glob("*.pose.txt")))

    def test_run_eval_inspect_recall(self, tmp_path, sample_sequence_dir, capsys):
        out, bank = tmp_path / "run", tmp_path / "bank"
        assert main(["run", str(sample_sequence_dir), str(out), "--bank", str(bank)]) == EXIT_OK
        assert (bank / "manifest.json").is_file()

        capsys.readouterr()
        assert main(["eval", str(out), str(sample_sequence_dir)]) == EXIT_OK
        printed = json.loads(capsys.readouterr().out)
        stored = json.loads((out / "metrics.json").read_text())
        assert printed == stored
        assert stored["ate_rmse"] is not None and stored["mask_iou"] is not None

        assert main(["bank", "inspect", str(bank)]) == EXIT_OK
        assert "1 maps" in capsys.readouterr().out

        assert main(["recall", str(sample_sequence_dir), "--bank", str(bank)]) == EXIT_OK
        rows = [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.startswith("{")]
        assert rows and rows[-1]["accepted"]
        assert rows[-1]["map_id"] == 1

    def test_config_file(self, tmp_path, sample_sequence_dir):
        config = tmp_path / "run.cfg"
        config.write_text("# faster run\ncadence=4\nlm_max_iter=5\n")
        assert main(["run", str(sample_sequence_dir), str(tmp_path / "out"), "--config", str(config)]) == EXIT_OK

    @pytest.mark.parametrize("override", ["cadence=0", "no_equals_sign", "unknown_key=1"])
    def test_bad_override_is_a_usage_error(self, tmp_path, sample_sequence_dir, override):
        code = main(["run", str(sample_sequence_dir), str(tmp_path / "out"), "--set", override])
        assert code == EXIT_USAGE
        assert not (tmp_path / "out").exists()

    def test_recall_needs_a_bank(self, sample_sequence_dir):
        assert main(["recall", str(sample_sequence_dir)]) == EXIT_USAGE

    def test_missing_sequence_fails(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "missing"), str(tmp_path / "out")]) == EXIT_FAILURE
        assert "cognimap: error:" in capsys.readouterr().err

    def test_eval_needs_two_poses(self, tmp_path, sample_sequence_dir):
        run_dir = tmp_path / "run"
        run_dir.mkdir()
        (run_dir / "trajectory.tum").write_text("0 0 0 0 0 0 0 1\n")
        assert main(["eval", str(run_dir), str(sample_sequence_dir)]) == EXIT_FAILURE

    def test_inspect_missing_bank(self, tmp_path):
        assert main(["bank", "inspect", str(tmp_path / "nobank")]) == EXIT_FAILURE

import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynvo.dataset_io import Trajectory
from dynvo.errors import EmptyAssociation, InsufficientData, InvalidArgument
from dynvo.evaluation import (
    REPORT_FIELDS,
    ErrorStats,
    absolute_trajectory_error,
    align_rigid,
    errors_csv,
    relative_pose_error,
    reports_csv,
)
from dynvo.geometry import PoseSE3, se3_exp

from oracles import brute_force_ate


def random_traj(rng, n=60, dt=0.1, t0=100.0):
    poses, pose = [], PoseSE3.identity()
    for _ in range(n):
        pose = pose @ se3_exp(rng.normal(0, [0.05] * 3 + [0.02] * 3))
        poses.append(pose)
    return Trajectory(t0 + dt * np.arange(n), poses)


def noisy(traj, rng, sigma=0.01):
    return Trajectory(traj.timestamps, [p @ se3_exp(rng.normal(0, sigma, 6)) for p in traj.poses])


# --- exact cases -------------------------------------------------------------------


def test_identical_trajectories_give_zero(rng):
    gt = random_traj(rng)
    rpe = relative_pose_error(gt, gt)
    ate = absolute_trajectory_error(gt, gt, rotation=True)
    assert rpe.trans.rmse == 0.0 and rpe.rot.max == 0.0
    assert ate.trans.rmse == 0.0 and ate.trans.max == 0.0 and ate.rot.max == 0.0


def test_rigidly_moved_copy_has_zero_ate(rng):
    gt = random_traj(rng)
    g = se3_exp([5.0, -2.0, 1.0, 0.3, -1.2, 2.0])
    assert absolute_trajectory_error(gt, gt.transformed(g)).trans.rmse < 1e-9


def test_drift_of_one_centimeter_per_second():
    stamps = np.arange(0.0, 10.0, 0.5)
    gt = Trajectory(stamps, [PoseSE3(np.eye(3), [t, 0.0, 0.0]) for t in stamps])
    est = Trajectory(stamps, [PoseSE3(np.eye(3), [t + 0.01 * t, 0.0, 0.0]) for t in stamps])
    rpe = relative_pose_error(gt, est, delta=1.0)
    assert rpe.trans_unit == "m/s"
    assert rpe.count == len(stamps) - 2
    # 0.01 has no exact binary form; equality holds to the last bit or two
    assert np.all(np.abs(rpe.trans_errors - 0.01) <= 1e-15)
    assert abs(rpe.trans.rmse - 0.01) <= 1e-15
    assert rpe.rot.max == 0.0


def test_drift_scales_with_delta():
    stamps = np.arange(0.0, 10.0, 0.5)
    gt = Trajectory(stamps, [PoseSE3.identity() for _ in stamps])
    est = Trajectory(stamps, [PoseSE3(np.eye(3), [0.01 * t, 0, 0]) for t in stamps])
    assert np.allclose(relative_pose_error(gt, est, delta=2.0).trans_errors, 0.01, atol=1e-15, rtol=0)
    pf = relative_pose_error(gt, est, delta=1, per_frame=True)
    assert pf.trans_unit == "m/frame"
    assert np.allclose(pf.trans_errors, 0.005, atol=1e-15, rtol=0)


def test_rotation_drift_in_degrees_per_second():
    stamps = np.arange(0.0, 5.0, 0.25)
    gt = Trajectory(stamps, [PoseSE3.identity() for _ in stamps])
    est = Trajectory(stamps, [se3_exp([0, 0, 0, 0, 0, np.deg2rad(2.0 * t)]) for t in stamps])
    rpe = relative_pose_error(gt, est)
    assert rpe.rot_unit == "deg/s"
    assert np.allclose(rpe.rot_errors, 2.0, atol=1e-12)


# --- properties ----------------------------------------------------------------------


twists = st.lists(st.floats(-3, 3), min_size=6, max_size=6).map(np.array)


@given(twists, twists)
@settings(max_examples=50, deadline=None)
def test_rpe_ignores_the_choice_of_world_frame(a, b):
    rng = np.random.default_rng(0)
    gt = random_traj(rng, 30)
    est = noisy(gt, rng)
    base = relative_pose_error(gt, est)
    moved = relative_pose_error(gt.transformed(se3_exp(a)), est.transformed(se3_exp(b)))
    assert np.allclose(moved.trans_errors, base.trans_errors, atol=1e-12)
    assert np.allclose(moved.rot_errors, base.rot_errors, atol=1e-9)


def test_ate_matches_quaternion_oracle(rng):
    for _ in range(20):
        gt = random_traj(rng, 40)
        est = noisy(gt, rng, 0.05).transformed(se3_exp(rng.normal(0, 1, 6)))
        ate = absolute_trajectory_error(gt, est)
        ref, _, _ = brute_force_ate(est.positions, gt.positions)
        assert abs(ate.trans.rmse - ref) <= 1e-12


def test_ate_alignment_is_optimal(rng):
    gt = random_traj(rng, 50)
    est = noisy(gt, rng, 0.05).transformed(se3_exp(rng.normal(0, 1, 6)))
    T = align_rigid(est.positions, gt.positions)
    best = absolute_trajectory_error(gt, est).trans.rmse

    def rmse(g):
        return np.sqrt(np.mean(np.sum((g.apply(est.positions) - gt.positions) ** 2, axis=1)))

    assert np.isclose(rmse(T), best, atol=1e-14)
    for _ in range(100):
        assert rmse(se3_exp(rng.normal(0, 1e-3, 6)) @ T) >= best


def test_align_rigid_is_proper_for_planar_points(rng):
    p = np.c_[rng.normal(size=(20, 2)), np.zeros(20)]
    g = se3_exp([1, 2, 3, 0.4, 0.5, 0.6])
    T = align_rigid(p, g.apply(p))
    assert np.isclose(np.linalg.det(T.rotation), 1.0)
    assert T.allclose(g, 1e-9)


# --- association and errors --------------------------------------------------------


def test_rpe_nearest_partner_with_jitter(rng):
    gt = random_traj(rng, 100, dt=0.033)
    est = Trajectory(gt.timestamps + rng.uniform(-0.004, 0.004, 100), gt.poses)
    rpe = relative_pose_error(gt, est, delta=1.0)
    assert rpe.count > 60
    assert rpe.trans.max < 1e-12


def test_too_short_for_delta(rng):
    gt = random_traj(rng, 5)
    with pytest.raises(EmptyAssociation):
        relative_pose_error(gt, gt, delta=1.0)


def test_no_matching_stamps(rng):
    gt = random_traj(rng, 5)
    far = Trajectory(gt.timestamps + 10, gt.poses)
    with pytest.raises(EmptyAssociation):
        absolute_trajectory_error(gt, far)


def test_ate_needs_three_poses(rng):
    gt = random_traj(rng, 2)
    with pytest.raises(InsufficientData):
        absolute_trajectory_error(gt, gt)


def test_bad_delta(rng):
    gt = random_traj(rng, 5)
    with pytest.raises(InvalidArgument):
        relative_pose_error(gt, gt, delta=0)
    with pytest.raises(InvalidArgument):
        relative_pose_error(gt, gt, delta=1.5, per_frame=True)


def test_error_stats():
    s = ErrorStats.of([3.0, 4.0])
    assert (s.rmse, s.mean, s.median, s.std, s.min, s.max) == (np.sqrt(12.5), 3.5, 3.5, 0.5, 3.0, 4.0)
    with pytest.raises(InsufficientData):
        ErrorStats.of([])


# --- CSV ------------------------------------------------------------------------------


def test_report_csv(rng):
    gt = random_traj(rng)
    est = noisy(gt, rng)
    reports = [relative_pose_error(gt, est), absolute_trajectory_error(gt, est)]
    rows = list(csv.DictReader(io.StringIO(reports_csv(reports))))
    assert list(rows[0]) == REPORT_FIELDS
    assert rows[0]["metric"] == "rpe" and rows[1]["metric"] == "ate"
    assert float(rows[0]["trans_rmse"]) == reports[0].trans.rmse
    assert rows[1]["rot_rmse"] == "" and rows[1]["trans_unit"] == "m"


def test_errors_csv(rng):
    gt = random_traj(rng)
    rep = absolute_trajectory_error(gt, noisy(gt, rng), rotation=True)
    rows = list(csv.reader(io.StringIO(errors_csv(rep))))
    assert rows[0] == ["timestamp", "trans_m", "rot_deg"]
    assert len(rows) == rep.count + 1
    assert float(rows[1][1]) == rep.trans_errors[0]

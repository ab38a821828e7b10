import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from doppler_match.core import RigidTransform, Trajectory, compose, inverse, rotation_angle
from doppler_match.errors import EmptyInput, LengthUnreachable, TimestampMismatch
from doppler_match.evaluation import (
    DEFAULT_SEGMENTS,
    absolute_pose_error,
    format_segment_table,
    relative_error,
    segment_csv,
    timing_report,
)

from oracles import umeyama


def traj(poses, dt=0.1):
    return Trajectory(np.arange(len(poses)) * dt, tuple(poses))


def wobbly_path(n=80, seed=0):
    """A curving ground-truth path and a noisy estimate of it."""
    rng = np.random.default_rng(seed)
    # 0.97 m steps keep segment lengths off the arc-length grid, so rounding
    # cannot move an endpoint
    step = RigidTransform(Rotation.from_euler("z", 3, degrees=True).as_matrix(), (0.97, 0.0, 0.0))
    gt, est = [RigidTransform()], [RigidTransform()]
    for _ in range(n - 1):
        gt.append(compose(gt[-1], step))
        noise = RigidTransform(Rotation.from_rotvec(rng.normal(0, 0.01, 3)).as_matrix(), rng.normal(0, 0.02, 3))
        est.append(compose(est[-1], compose(step, noise)))
    return traj(est), traj(gt)


def random_rigid(seed):
    rng = np.random.default_rng(seed)
    return RigidTransform(Rotation.random(random_state=rng).as_matrix(), rng.normal(0, 20, 3))


def left(G, t):
    return Trajectory(t.timestamps, tuple(compose(G, p) for p in t.poses))


# relative error -----------------------------------------------------------------


def test_identical_trajectories_have_zero_error():
    _, gt = wobbly_path()
    rep = relative_error(gt, gt)
    assert rep.segment_lengths == list(DEFAULT_SEGMENTS)
    assert rep.rotation_deg == [0.0] * 6 and rep.translation_m == [0.0] * 6


def test_common_global_transform_is_zero_error():
    _, gt = wobbly_path()
    rep = relative_error(left(random_rigid(1), gt), gt)
    assert max(rep.rotation_deg) <= 1e-9 and max(rep.translation_m) <= 1e-9


def test_global_transform_invariances():
    est, gt = wobbly_path(seed=3)
    base = relative_error(est, gt)
    assert min(base.translation_m) > 0.01
    G = random_rigid(2)
    both = relative_error(left(G, est), left(G, gt))
    alone = relative_error(left(G, est), gt)
    for rep in (both, alone):
        np.testing.assert_allclose(rep.rotation_deg, base.rotation_deg, atol=1e-9)
        np.testing.assert_allclose(rep.translation_m, base.translation_m, atol=1e-9)


def test_injected_drift():
    gt = traj([RigidTransform(np.eye(3), (k, 0, 0)) for k in range(60)])
    est = traj([RigidTransform(np.eye(3), (1.01 * k, 0, 0)) for k in range(60)])
    rep = relative_error(est, gt, [8.0])
    assert rep.translation_m[0] == pytest.approx(0.08, abs=1e-9)
    assert rep.rotation_deg[0] == 0.0
    assert rep.sample_counts == [52]


def test_segment_endpoint_is_first_frame_reaching_length():
    # irregular spacing: arc = 0, 3, 5, 9, 10, 16
    xs = [0, 3, 5, 9, 10, 16]
    gt = traj([RigidTransform(np.eye(3), (x, 0, 0)) for x in xs])
    est = traj([RigidTransform(np.eye(3), (x + 0.1 * k * k, 0, 0)) for k, x in enumerate(xs)])
    rep = relative_error(est, gt, [6.0])
    # segment ends: 0->3 (9), 1->3 (6), 2->5 (11), 3->5 (7), 4->5 (6)
    pairs = [(0, 3), (1, 3), (2, 5), (3, 5), (4, 5)]
    errs = [abs(0.1 * (j * j - i * i)) for i, j in pairs]
    assert rep.sample_counts == [5]
    assert rep.translation_m[0] == pytest.approx(math.fsum(errs) / 5, abs=1e-12)


def test_relative_error_matches_loop_oracle():
    est, gt = wobbly_path(seed=5)
    rep = relative_error(est, gt, [8.0, 24.0], stride=2)
    arc = np.concatenate([[0], np.cumsum(np.linalg.norm(np.diff(gt.positions, axis=0), axis=1))])
    for L, rot, tr in zip(rep.segment_lengths, rep.rotation_deg, rep.translation_m):
        rs, ts = [], []
        for i in reversed(range(0, len(gt), 2)):  # reversed order: result must not depend on it
            js = [j for j in range(i, len(gt)) if arc[j] - arc[i] >= L]
            if not js:
                continue
            j = js[0]
            E = compose(
                inverse(compose(inverse(gt.poses[i]), gt.poses[j])),
                compose(inverse(est.poses[i]), est.poses[j]),
            )
            rs.append(math.degrees(rotation_angle(E.rotation)))
            ts.append(np.linalg.norm(E.translation))
        assert rot == pytest.approx(math.fsum(rs) / len(rs), abs=1e-12)
        assert tr == pytest.approx(math.fsum(ts) / len(ts), abs=1e-12)


def test_unreachable_lengths():
    gt = traj([RigidTransform(np.eye(3), (k, 0, 0)) for k in range(10)])
    rep = relative_error(gt, gt, [8.0, 16.0])
    assert rep.segment_lengths == [8.0] and rep.unreachable == [16.0]
    assert "16 m: unreachable" in format_segment_table(rep)
    with pytest.raises(LengthUnreachable):
        relative_error(gt, gt, [16.0, 24.0])


def test_relative_error_input_checks():
    _, gt = wobbly_path(20)
    with pytest.raises(TimestampMismatch):
        relative_error(traj(gt.poses[:10]), gt)
    shifted = Trajectory(gt.timestamps + 0.5, gt.poses)
    with pytest.raises(TimestampMismatch):
        relative_error(shifted, gt)
    with pytest.raises(ValueError):
        relative_error(gt, gt, [8.0, 4.0])


def test_segment_outputs():
    gt = traj([RigidTransform(np.eye(3), (k, 0, 0)) for k in range(20)])
    est = traj([RigidTransform(np.eye(3), (1.01 * k, 0, 0)) for k in range(20)])
    rep = relative_error(est, gt, [8.0, 16.0])
    assert segment_csv(rep).splitlines() == [
        "segment_m,rot_deg,trans_m",
        "8,0.000000000,0.080000000",
        "16,0.000000000,0.160000000",
    ]
    table = format_segment_table(rep).splitlines()
    assert table[0].split() == ["segment_m", "rot_deg", "trans_m", "samples"]
    assert table[1].split() == ["8", "0.000000", "0.080000", "12"]


# absolute pose error ---------------------------------------------------------------


def test_ape_identical_and_shifted():
    _, gt = wobbly_path()
    assert absolute_pose_error(gt, gt).rmse == pytest.approx(0.0, abs=1e-12)
    shifted = left(RigidTransform(np.eye(3), (1, 0, 0)), gt)
    res = absolute_pose_error(shifted, gt)
    assert res.aligned and res.max <= 1e-9


def test_ape_invariant_to_global_transform():
    est, gt = wobbly_path(seed=4)
    base = absolute_pose_error(est, gt)
    moved = absolute_pose_error(left(random_rigid(9), est), gt)
    assert abs(moved.rmse - base.rmse) <= 1e-9
    np.testing.assert_allclose(moved.residuals, base.residuals, atol=1e-9)


def test_ape_single_displaced_pose():
    gt = traj([RigidTransform(np.eye(3), (k, 0.1 * math.sin(k / 5), 0)) for k in range(100)])
    poses = list(gt.poses)
    poses[50] = RigidTransform(np.eye(3), poses[50].translation + np.array([0.0, 1.0, 0.0]))
    est = traj(poses)
    res = absolute_pose_error(est, gt)
    R, t = umeyama(est.positions, gt.positions)
    resid = np.linalg.norm(gt.positions - (est.positions @ R.T + t), axis=1)
    assert res.max == pytest.approx(resid.max(), abs=1e-9)
    assert res.rmse == pytest.approx(np.sqrt(np.mean(resid**2)), abs=1e-9)
    assert int(np.argmax(res.residuals)) == 50
    assert 0.9 < res.max < 1.0


def test_ape_short_and_empty():
    gt = traj([RigidTransform(), RigidTransform(np.eye(3), (1, 0, 0))])
    est = traj([RigidTransform(), RigidTransform(np.eye(3), (1, 1, 0))])
    res = absolute_pose_error(est, gt)
    assert not res.aligned and res.max == 1.0
    with pytest.raises(EmptyInput):
        absolute_pose_error(traj([]), traj([]))


# timing -----------------------------------------------------------------------------


def test_timing_examples():
    t = timing_report([1e-3] * 10)
    assert t.mean_ms == pytest.approx(1.0) and t.count == 10
    t = timing_report([1e-3, 2e-3, 3e-3])
    assert t.mean_ms == pytest.approx(2.0) and t.median_ms == pytest.approx(2.0)
    assert t.p95_ms == pytest.approx(3.0)
    with pytest.raises(EmptyInput):
        timing_report([])


def test_timing_p95_nearest_rank():
    samples = [((7 * k) % 100 + 1) * 1e-3 for k in range(100)]  # a permutation of 1..100 ms
    t = timing_report(samples)
    assert t.p95_ms == pytest.approx(95.0)  # ceil(0.95 * 100) = 95th order statistic
    assert timing_report(samples[:20]).p95_ms == pytest.approx(sorted(samples[:20])[18] * 1e3)

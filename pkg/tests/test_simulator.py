import math

import numpy as np
import pytest
from scipy.linalg import expm, logm

from doppler_match.core import RigidTransform, Twist, apply, compose, inverse
from doppler_match.correspondence import source_keys, target_keys
from doppler_match.errors import ZeroRangePoint
from doppler_match.simulator import (
    MotionProfile,
    NoiseSpec,
    SceneKind,
    SceneSpec,
    doppler_of,
    generate_scene,
    simulate_scan_pair,
    simulate_trajectory,
)


def key_gaps(pair, dt):
    """|f - g| and r^2 over true static pairs of a simulated scan pair."""
    src, tgt, _ = pair
    j = pair.true_target
    ok = j >= 0
    f = source_keys(src, dt)[ok]
    g = target_keys(tgt, dt)[j[ok]]
    return np.abs(f - g), src.ranges[ok] ** 2


# scenes ---------------------------------------------------------------------


def test_random_scatter_is_deterministic():
    spec = SceneSpec(SceneKind.RANDOM_SCATTER, point_count=100, rng_seed=42)
    a, b = generate_scene(spec), generate_scene(spec)
    assert a.shape == (100, 3)
    assert np.all(np.isfinite(a))
    assert a.tobytes() == b.tobytes()
    assert generate_scene(SceneSpec("random_scatter", point_count=100, rng_seed=43)).tobytes() != a.tobytes()


def test_random_scatter_respects_box_and_min_range():
    pts = generate_scene(SceneSpec("random_scatter", extent=4.0, point_count=2000, min_range=1.0))
    assert np.all(np.abs(pts) <= 2.0)
    assert np.all(np.linalg.norm(pts, axis=1) >= 1.0)


def test_straight_wall_construction():
    pts = generate_scene(SceneSpec("straight_wall", point_count=500, wall_offset=10))
    np.testing.assert_allclose(np.abs(pts[:, 1]), 10.0, atol=1e-12)
    assert np.any(pts[:, 1] > 0) and np.any(pts[:, 1] < 0)


def test_tunnel_construction():
    pts = generate_scene(SceneSpec("tunnel", point_count=500, tunnel_radius=5))
    np.testing.assert_allclose(np.hypot(pts[:, 1], pts[:, 2]), 5.0, atol=1e-12)
    assert np.all(pts[:, 2] >= 0)


def test_curved_wall_construction():
    spec = SceneSpec("curved_wall", point_count=500, curve_radius=50, wall_offset=10)
    pts = generate_scene(spec)
    radius = np.hypot(pts[:, 0], pts[:, 1] - 50.0)
    assert np.all(np.isclose(radius, 40.0, atol=1e-9) | np.isclose(radius, 60.0, atol=1e-9))


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(point_count=0)
    with pytest.raises(ValueError):
        SceneSpec(extent=0)
    with pytest.raises(ValueError):
        SceneSpec(kind="pyramid")
    with pytest.raises(ValueError):
        NoiseSpec(dropout_rate=1.0)
    with pytest.raises(ValueError):
        NoiseSpec(position_sigma=-1)
    with pytest.raises(ValueError):
        MotionProfile((), 0.1)
    with pytest.raises(ValueError):
        MotionProfile.constant(Twist(), 5, delta_t=0)


# Doppler model ----------------------------------------------------------------


def test_doppler_examples():
    assert doppler_of((20, 0, 0), Twist((0, 0, 0), (-10, 0, 0))) == -10.0
    assert doppler_of((0, 7, 0), Twist((0, 0, 0), (-10, 0, 0))) == 0.0
    assert doppler_of((3, 4, 0), Twist((0.3, 0.2, 1), (0, 0, 0))) == 0.0
    # receding point: apparent flow away from the sensor
    assert doppler_of((3, 4, 0), Twist((0, 0, 0), (3, 4, 0))) == pytest.approx(5.0)
    with pytest.raises(ZeroRangePoint):
        doppler_of((0, 0, 0), Twist())


def test_doppler_is_independent_of_omega():
    rng = np.random.default_rng(2)
    rho = (-3.0, 1.0, 0.5)
    for p in rng.normal(0, 10, (50, 3)):
        base = doppler_of(p, Twist((0, 0, 0), rho))
        for w in rng.normal(0, 2, (3, 3)):
            assert doppler_of(p, Twist(w, rho)) == base


def test_pure_rotation_annihilates_doppler():
    pts = generate_scene(SceneSpec("random_scatter", point_count=200))
    src, tgt, _ = simulate_scan_pair(pts, RigidTransform(), Twist((0, 0, 1.0), (0, 0, 0)), 0.1)
    assert np.all(src.doppler == 0) and np.all(tgt.doppler == 0)


# scan pairs -------------------------------------------------------------------


def test_stationary_pair_is_identical():
    pts = generate_scene(SceneSpec("random_scatter", point_count=300))
    pair = simulate_scan_pair(pts, RigidTransform(), Twist(), 0.1)
    src, tgt, inc = pair
    np.testing.assert_array_equal(inc.rotation, np.eye(3))
    np.testing.assert_array_equal(inc.translation, 0.0)
    j = pair.true_target
    np.testing.assert_array_equal(tgt.positions[j], src.positions)
    np.testing.assert_array_equal(tgt.doppler[j], src.doppler)
    assert tgt.timestamp == pytest.approx(0.1)


def test_true_pairs_follow_increment():
    pts = generate_scene(SceneSpec("random_scatter", point_count=300, rng_seed=9))
    pose = RigidTransform(expm(np.array([[0, -0.3, 0], [0.3, 0, 0], [0, 0, 0.0]])), (4, -1, 0.5))
    pair = simulate_scan_pair(pts, pose, Twist((0.1, -0.2, 0.4), (-5, 1, 0)), 0.1)
    src, tgt, inc = pair
    np.testing.assert_allclose(apply(inc, src.positions), tgt.positions[pair.true_target], atol=1e-12)


def test_pure_translation_keys_are_exact():
    pts = generate_scene(SceneSpec("random_scatter", point_count=500, rng_seed=1))
    pair = simulate_scan_pair(pts, RigidTransform(), Twist((0, 0, 0), (-2, 0, 0)), 0.1)
    assert np.linalg.norm(pair.increment.translation) == pytest.approx(0.2, abs=1e-15)
    gap, r2 = key_gaps(pair, 0.1)
    assert np.all(gap <= 1e-6 * np.maximum(1.0, r2))


def test_rotation_gap_scales_with_turn_rate():
    pts = generate_scene(SceneSpec("random_scatter", point_count=500, rng_seed=4))
    gaps = {}
    for w in (0.1, 0.56):
        pair = simulate_scan_pair(pts, RigidTransform(), Twist((0, 0, w), (-8.3, 0, 0)), 0.083)
        gaps[w] = key_gaps(pair, 0.083)[0].max()
    assert gaps[0.1] > 0
    # the gap is (p - R p) . rho dT, first order in w: the ratio is 0.56 / 0.1
    assert gaps[0.56] / gaps[0.1] == pytest.approx(5.6, rel=0.02)


def test_rotation_gap_is_exactly_rotation_term():
    # f - g = (p - R p) . rho dT for static points, whatever the magnitude
    pts = generate_scene(SceneSpec("random_scatter", point_count=200, rng_seed=6))
    tw, dt = Twist((0.2, -0.1, 0.5), (-6, 1, 0.3)), 0.1
    pair = simulate_scan_pair(pts, RigidTransform(), tw, dt)
    src, tgt, inc = pair
    j = pair.true_target
    f = source_keys(src, dt)
    g = target_keys(tgt, dt)[j]
    expected = (src.positions - src.positions @ inc.rotation.T) @ tw.rho * dt
    np.testing.assert_allclose(f - g, expected, atol=1e-9)


def test_noise_dropout_and_shuffle_are_seeded():
    pts = generate_scene(SceneSpec("random_scatter", point_count=400))
    noise = NoiseSpec(position_sigma=0.05, doppler_sigma=0.1, dropout_rate=0.2, rng_seed=17)
    a = simulate_scan_pair(pts, RigidTransform(), Twist((0, 0, 0.1), (-5, 0, 0)), 0.1, noise)
    b = simulate_scan_pair(pts, RigidTransform(), Twist((0, 0, 0.1), (-5, 0, 0)), 0.1, noise)
    for x, y in ((a.source, b.source), (a.target, b.target)):
        assert x.positions.tobytes() == y.positions.tobytes()
        assert x.doppler.tobytes() == y.doppler.tobytes()
    assert 240 < len(a.source) < 400 and 240 < len(a.target) < 400
    assert np.any(a.true_target < 0)
    assert np.all(np.diff(a.source_ids) > 0)
    assert np.any(np.diff(a.target_ids) < 0)


# dynamic objects --------------------------------------------------------------


def test_dynamic_points_break_the_ego_motion_model():
    pts = generate_scene(SceneSpec("random_scatter", point_count=1000, rng_seed=2))
    tw, dt = Twist((0, 0, 0), (-5, 0, 0)), 0.1
    noise = NoiseSpec(dynamic_point_fraction=0.3, dynamic_speed=5.0, rng_seed=8)
    pair = simulate_scan_pair(pts, RigidTransform(), tw, dt, noise)
    src, tgt, inc = pair
    dyn = pair.source_dynamic
    assert dyn.sum() == 300
    j = pair.true_target
    static = ~dyn
    # static points: Doppler is the ego prediction and the increment is exact
    ego = src.positions @ tw.rho / src.ranges
    np.testing.assert_allclose(src.doppler[static], ego[static], atol=1e-12)
    moved = apply(inc, src.positions)
    np.testing.assert_allclose(moved[static], tgt.positions[j[static]], atol=1e-12)
    # dynamic points: off by their own motion, 5 m/s over dT = 0.5 m
    miss = np.linalg.norm(moved[dyn] - tgt.positions[j[dyn]], axis=1)
    np.testing.assert_allclose(miss, 0.5, atol=1e-12)
    assert np.median(np.abs(src.doppler[dyn] - ego[dyn])) > 1.0
    # the key gap of static pairs still meets the exactness bound
    gap, r2 = key_gaps(pair, dt)
    assert np.all(gap[static] <= 1e-6 * np.maximum(1.0, r2[static]))


def test_zero_dynamic_fraction_equals_static_scene():
    pts = generate_scene(SceneSpec("random_scatter", point_count=200))
    tw = Twist((0, 0, 0.2), (-4, 0, 0))
    a = simulate_scan_pair(pts, RigidTransform(), tw, 0.1, NoiseSpec(rng_seed=3))
    b = simulate_scan_pair(pts, RigidTransform(), tw, 0.1)
    assert a.target.positions.tobytes() != b.target.positions.tobytes()  # different shuffle seed
    c = simulate_scan_pair(pts, RigidTransform(), tw, 0.1, NoiseSpec(dynamic_point_fraction=0.0))
    assert c.target.positions.tobytes() == b.target.positions.tobytes()


# trajectories -----------------------------------------------------------------


def test_two_frame_trajectory_matches_scan_pair():
    pts = generate_scene(SceneSpec("tunnel", point_count=300))
    tw = Twist((0, 0.05, 0.2), (-7, 0.3, 0))
    noise = NoiseSpec(position_sigma=0.02, doppler_sigma=0.05, dropout_rate=0.1, rng_seed=5)
    traj = simulate_trajectory(pts, MotionProfile.constant(tw, 2, 0.1), noise)
    pair = simulate_scan_pair(pts, RigidTransform(), tw, 0.1, noise)
    assert len(traj.scans) == 2
    for x, y in ((traj.scans[0], pair.source), (traj.scans[1], pair.target)):
        assert x.positions.tobytes() == y.positions.tobytes()
        assert x.doppler.tobytes() == y.doppler.tobytes()
        assert x.timestamp == y.timestamp
    np.testing.assert_array_equal(traj.increments[0].translation, pair.increment.translation)


def test_straight_path_length():
    tw = Twist((0, 0, 0), (-10, 0, 0))
    traj = simulate_trajectory(
        generate_scene(SceneSpec("straight_wall", point_count=50)), MotionProfile.constant(tw, 50, 0.1)
    )
    scans, poses = traj
    assert len(scans) == 50
    length = sum(np.linalg.norm(b.translation - a.translation) for a, b in zip(poses, poses[1:]))
    # 50 scans span 49 increments of |rho| dT = 1 m
    assert length == pytest.approx(49 * 10 * 0.1, abs=1e-9)
    np.testing.assert_allclose(traj.timestamps, np.arange(50) * 0.1, atol=1e-12)


def test_constant_twist_matches_screw_motion():
    tw, dt, frames = Twist((0.02, -0.01, 0.3), (-8, 0.5, 0.2)), 0.1, 40
    traj = simulate_trajectory(
        generate_scene(SceneSpec("random_scatter", point_count=20)), MotionProfile.constant(tw, frames, dt)
    )
    # pose_n = (increment^n)^-1 with increment^n = expm(n logm(increment))
    log_inc = logm(tw.increment(dt).as_matrix()).real
    for n in (1, 7, frames - 1):
        expected = RigidTransform.from_matrix(expm(-n * log_inc))
        np.testing.assert_allclose(traj.poses[n].rotation, expected.rotation, atol=1e-9)
        np.testing.assert_allclose(traj.poses[n].translation, expected.translation, atol=1e-9)


def test_pose_chain_matches_increments():
    tw = Twist((0, 0, 0.4), (-6, 0, 0))
    traj = simulate_trajectory(
        generate_scene(SceneSpec("random_scatter", point_count=200)), MotionProfile.constant(tw, 6, 0.1)
    )
    for k in range(5):
        rel = compose(inverse(traj.poses[k + 1]), traj.poses[k])
        np.testing.assert_allclose(rel.rotation, traj.increments[k].rotation, atol=1e-12)
        np.testing.assert_allclose(rel.translation, traj.increments[k].translation, atol=1e-12)
        pair = traj.pair(k)
        np.testing.assert_allclose(
            apply(pair.increment, pair.source.positions),
            pair.target.positions[pair.true_target],
            atol=1e-9,
        )


def test_trajectory_is_deterministic():
    pts = generate_scene(SceneSpec("curved_wall", point_count=300, rng_seed=3))
    prof = MotionProfile.constant(Twist((0, 0, 0.2), (-10, 0, 0)), 5, 0.1)
    noise = NoiseSpec(0.01, 0.02, 0.05, 0.1, rng_seed=12)
    a = simulate_trajectory(pts, prof, noise)
    b = simulate_trajectory(pts, prof, noise)
    for x, y in zip(a.scans, b.scans):
        assert x.positions.tobytes() == y.positions.tobytes()
        assert x.doppler.tobytes() == y.doppler.tobytes()


def test_turning_heading_grows_linearly():
    tw = Twist((0, 0, 0.5), (-5, 0, 0))
    traj = simulate_trajectory(
        generate_scene(SceneSpec("random_scatter", point_count=20)), MotionProfile.constant(tw, 11, 0.1)
    )
    yaw = math.atan2(traj.poses[10].rotation[1, 0], traj.poses[10].rotation[0, 0])
    # point motion turns by +w dT per step, so the sensor turns the other way
    assert yaw == pytest.approx(-0.5, abs=1e-12)

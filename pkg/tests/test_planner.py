import math

import numpy as np
import pytest

from safearm import planner
from safearm.arm import ArmParams, ArmState
from safearm.human import ObstacleEstimate, predict_constant_velocity


def feasible_reference(rng, arm, config, obstacles):
    """Random straight-line reference whose endpoints clear the obstacles."""
    d_req = config.d_min_longterm + config.discretization_margin
    while True:
        start = rng.uniform(arm.joint_lower * 0.8, arm.joint_upper * 0.8)
        goal = rng.uniform(arm.joint_lower * 0.8, arm.joint_upper * 0.8)
        ref = planner.make_reference(ArmState(start, np.zeros(2)), goal, 0.5,
                                     0.1, arm, config.h_max)
        vals = planner.signed_distance_batch(ref.waypoints, obstacles[0], arm,
                                             d_req)
        if vals[0] > 0.05 and vals[-1] > 0.05:
            return ref, start, goal


def test_disk_segment_distance():
    disk = planner.Disk([0.0, 1.0], 0.5)
    d = disk.segment_distance(np.array([-1.0, 0.0]), np.array([1.0, 0.0]))
    assert d == pytest.approx(0.5)


def test_halfplane_segment_distance():
    zone = planner.HalfplaneZone([1.0, 0.0], 1.7)
    d = zone.segment_distance(np.array([0.0, 0.0]), np.array([1.0, 0.0]))
    assert d == pytest.approx(0.7)
    assert zone.segment_distance(np.array([1.9, 0.0]),
                                 np.array([2.0, 0.0])) < 0


def test_polygon_signed_distance_inside_negative():
    poly = planner.ConvexPolygon([[0, 0], [1, 0], [1, 1], [0, 1]])
    inside = poly.segment_distance(np.array([0.5, 0.5]), np.array([0.5, 0.6]))
    outside = poly.segment_distance(np.array([2.0, 0.5]), np.array([3.0, 0.5]))
    assert inside < 0
    assert outside == pytest.approx(1.0)


def test_signed_distance_gradient_modes_agree(unit_arm, rng):
    disk = planner.Disk([1.2, 0.6], 0.3)
    for _ in range(30):
        theta = rng.uniform(-2.5, 2.5, 2)
        va, ga = planner.signed_distance(theta, disk, unit_arm, 0.1,
                                         "analytic")
        vn, gn = planner.signed_distance(theta, disk, unit_arm, 0.1, "numeric")
        assert va == pytest.approx(vn, abs=1e-10)
        np.testing.assert_allclose(ga, gn, atol=1e-4)


def test_worked_example_linearization(unit_arm):
    """End-point x <= 1.7 constraint linearized at (pi/4, pi/4)."""
    zone = planner.HalfplaneZone([1.0, 0.0], 1.7)
    r = np.array([math.pi / 4, math.pi / 4])
    val, grad = planner.signed_distance(r, zone, unit_arm, 0.0, "analytic")
    root2 = math.sqrt(2.0) / 2.0
    assert abs(val - (1.7 - root2)) < 1e-12
    np.testing.assert_allclose(grad, [root2 + 1.0, 1.0], atol=1e-12)


def test_convexify_contains_reference_when_feasible(unit_arm, rng):
    config = planner.PlannerConfig()
    disk = planner.Disk([1.5, 0.8], 0.2)
    for _ in range(10):
        ref, _, _ = feasible_reference(rng, unit_arm, config, [disk])
        vals = planner.signed_distance_batch(
            ref.waypoints, disk, unit_arm,
            config.d_min_longterm + config.discretization_margin)
        if np.min(vals) <= 0:
            continue
        region = planner.convexify(ref, None, unit_arm, config,
                                   static_obstacles=(disk,))
        for q in range(ref.h + 1):
            assert region.contains(q, ref.waypoints[q], tol=1e-9)


def test_convexify_containment_sampling(unit_arm, rng):
    """Samples from the convex region satisfy the original constraint."""
    config = planner.PlannerConfig()
    disk = planner.Disk([1.3, 0.5], 0.25)
    d_req = config.d_min_longterm + config.discretization_margin
    for _ in range(10):
        ref, _, _ = feasible_reference(rng, unit_arm, config, [disk])
        vals = planner.signed_distance_batch(ref.waypoints, disk, unit_arm,
                                             d_req)
        if np.min(vals) <= 0:
            continue
        region = planner.convexify(ref, None, unit_arm, config,
                                   static_obstacles=(disk,), d_required=d_req)
        for q in range(ref.h + 1):
            samples = region.sample(q, rng, 200)
            sv = planner.signed_distance_batch(samples, disk, unit_arm, d_req)
            assert np.all(sv >= -1e-9)


def test_make_reference_endpoints_and_horizon(unit_arm):
    start = ArmState([0.0, 0.0], [0.0, 0.0])
    ref = planner.make_reference(start, [1.0, 0.5], 0.5, 0.1, unit_arm, 6)
    np.testing.assert_allclose(ref.waypoints[0], [0.0, 0.0])
    np.testing.assert_allclose(ref.waypoints[-1], [1.0, 0.5])
    assert 1 <= ref.h <= 6


def test_cfs_no_obstacle_returns_reference(unit_arm):
    config = planner.PlannerConfig()
    start = ArmState([0.2, 0.1], [0.0, 0.0])
    ref = planner.make_reference(start, [1.0, 0.4], 0.5, 0.1, unit_arm, 6)
    traj, stats = planner.cfs_solve(ref, None, (start, [1.0, 0.4]), unit_arm,
                                    config)
    assert stats.feasible
    np.testing.assert_allclose(traj.waypoints[0], [0.2, 0.1], atol=1e-8)
    np.testing.assert_allclose(traj.waypoints[-1], [1.0, 0.4], atol=1e-8)


def test_cfs_detours_around_blocking_disk(unit_arm):
    config = planner.PlannerConfig()
    start_theta = np.array([0.9, 0.1])
    goal_theta = np.array([-0.9, 0.1])
    start = ArmState(start_theta, np.zeros(2))
    ref = planner.make_reference(start, goal_theta, 0.5, 0.1, unit_arm, 6)
    # a disk grazing the straight-line sweep of the end point
    disk = planner.Disk([2.1, 0.3], 0.1)
    vals = planner.signed_distance_batch(
        ref.waypoints, disk, unit_arm,
        config.d_min_longterm + config.discretization_margin)
    assert np.min(vals) < 0  # the reference really is blocked
    traj, stats = planner.cfs_solve(ref, None, (start, goal_theta), unit_arm,
                                    config, static_obstacles=(disk,))
    assert stats.feasible
    assert planner.collision_feasible(traj, None, unit_arm, (disk,),
                                      config.d_min_longterm - 1e-6)
    # it actually had to move off the straight joint-space line
    seg = (goal_theta - start_theta) / np.linalg.norm(goal_theta - start_theta)
    rel = traj.waypoints - start_theta
    perp = rel - np.outer(rel @ seg, seg)
    assert float(np.max(np.linalg.norm(perp, axis=1))) > 0.05


def test_cfs_cost_monotone_on_random_instances(unit_arm, rng):
    config = planner.PlannerConfig()
    disk = planner.Disk([1.4, 0.4], 0.25)
    instances = []
    for _ in range(30):
        ref, start, goal = feasible_reference(rng, unit_arm, config, [disk])
        instances.append((ref, start, goal, disk))
    # plus a known multi-iteration detour instance
    start = np.array([0.9, 0.1])
    goal = np.array([-0.9, 0.1])
    ref = planner.make_reference(ArmState(start, np.zeros(2)), goal, 0.5, 0.1,
                                 unit_arm, 6)
    instances.append((ref, start, goal, planner.Disk([2.1, 0.3], 0.1)))
    count = 0
    for ref, start, goal, obst in instances:
        traj, stats = planner.cfs_solve(ref, None,
                                        (ArmState(start, np.zeros(2)), goal),
                                        unit_arm, config,
                                        static_obstacles=(obst,))
        if len(stats.costs) >= 2:
            diffs = np.diff(stats.costs)
            assert np.all(diffs <= 1e-9)
            count += 1
        assert stats.iterations <= config.max_cfs_iter
    assert count >= 1


def test_cfs_velocity_bounds(unit_arm):
    config = planner.PlannerConfig(vel_lower=np.array([-1.0, -1.0]),
                                   vel_upper=np.array([1.0, 1.0]))
    start = ArmState([0.0, 0.0], [0.0, 0.0])
    goal = np.array([0.5, 0.3])
    ref = planner.make_reference(start, goal, 0.5, 0.1, unit_arm, 6)
    traj, stats = planner.cfs_solve(ref, None, (start, goal), unit_arm, config)
    assert stats.feasible
    vel = np.diff(traj.waypoints, axis=0) / traj.dt
    assert np.all(vel <= 1.0 + 1e-6)
    assert np.all(vel >= -1.0 - 1e-6)


def test_cfs_cancel(unit_arm):
    config = planner.PlannerConfig()
    start = ArmState([0.9, 0.0], np.zeros(2))
    ref = planner.make_reference(start, [-0.9, 0.0], 0.5, 0.1, unit_arm, 6)
    traj, stats = planner.cfs_solve(ref, None, (start, [-0.9, 0.0]), unit_arm,
                                    config,
                                    static_obstacles=(planner.Disk([1.9, 0.0], 0.15),),
                                    cancel_check=lambda: True)
    assert stats.status == "cancelled"


def test_cfs_unplannable_reports_failure(unit_arm):
    config = planner.PlannerConfig()
    # obstacle swallowing the goal configuration
    goal = np.array([0.0, 0.0])
    disk = planner.Disk([2.0, 0.0], 0.6)
    start = ArmState([1.5, 0.0], np.zeros(2))
    ref = planner.make_reference(start, goal, 0.5, 0.1, unit_arm, 6)
    traj, stats = planner.cfs_solve(ref, None, (start, goal), unit_arm,
                                    config, static_obstacles=(disk,))
    assert not stats.feasible


def test_predicted_path_used_per_step(unit_arm):
    config = planner.PlannerConfig()
    est = ObstacleEstimate([2.5, 0.0], [-1.0, 0.0], 2.0, 1.0)
    path = predict_constant_velocity(est, 6, 0.1)
    obs0 = planner.obstacles_at_step(0, path, ())
    obs3 = planner.obstacles_at_step(3, path, ())
    assert obs0[0].center[0] > obs3[0].center[0]
    assert obs3[0].radius > obs0[0].radius


def test_baseline_solves_blocking_instance(unit_arm):
    config = planner.PlannerConfig()
    start = ArmState([0.9, 0.1], np.zeros(2))
    goal = np.array([-0.9, 0.1])
    ref = planner.make_reference(start, goal, 0.5, 0.1, unit_arm, 6)
    disk = planner.Disk([2.1, 0.3], 0.1)
    traj, stats = planner.baseline_nlp_solve(ref, None, (start, goal),
                                             unit_arm, config,
                                             static_obstacles=(disk,))
    assert planner.collision_feasible(traj, None, unit_arm, (disk,),
                                      config.d_min_longterm - 1e-6)

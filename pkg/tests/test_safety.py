import math

import numpy as np
import pytest

from safearm import safety
from safearm.arm import ArmParams, ArmState, ControlInput, step_dynamics

PARAMS = safety.SafetyIndexParams(D=0.16, k_phi=1.0, eta_R=0.1, d_min=0.2)


def static_obs(p, accel_bound=0.0):
    return safety.ObstacleKinematics(p, [0.0, 0.0], accel_bound)


def sample_state(rng, arm, speed=2.0):
    return ArmState(rng.uniform(arm.joint_lower, arm.joint_upper),
                    rng.uniform(-speed, speed, arm.n))


def sample_obs(rng, accel_bound=1.0):
    return safety.ObstacleKinematics(rng.uniform(-1.3, 1.3, 2),
                                     rng.uniform(-1.0, 1.0, 2), accel_bound)


def phi_of(arm, state, obs):
    return safety.evaluate_index(PARAMS, arm, state, obs).phi


# -- index --------------------------------------------------------------------


def test_index_far_static_negative(arm2):
    ev = safety.evaluate_index(PARAMS, arm2, ArmState([0, 0], [0, 0]),
                               static_obs([0.5, 5.0]))
    assert ev.phi < 0
    assert ev.phi == pytest.approx(PARAMS.D - ev.d ** 2)


def test_index_boundary_zero(arm2):
    # obstacle straight above the elbow at effective distance sqrt(D), at rest
    d = math.sqrt(PARAMS.D)
    ev = safety.evaluate_index(PARAMS, arm2, ArmState([0, 0], [0, 0]),
                               static_obs([0.5, d + 0.05]))
    assert ev.phi == pytest.approx(0.0, abs=1e-12)


def test_index_contact_flag(arm2):
    ev = safety.evaluate_index(PARAMS, arm2, ArmState([0, 0], [0, 0]),
                               static_obs([0.5, 0.01]))
    assert ev.contact
    assert math.isinf(ev.phi)


def test_index_velocity_term_sign(arm2):
    # obstacle approaching the arm raises phi; receding lowers it
    toward = safety.ObstacleKinematics([0.5, 0.5], [0.0, -1.0], 0.0)
    away = safety.ObstacleKinematics([0.5, 0.5], [0.0, 1.0], 0.0)
    s = ArmState([0, 0], [0, 0])
    assert phi_of(arm2, s, toward) > phi_of(arm2, s, away)


def test_index_d_dot_matches_finite_difference(arm2, rng):
    dt = 1e-6
    checked = 0
    for _ in range(200):
        state = sample_state(rng, arm2)
        obs = sample_obs(rng)
        ev = safety.evaluate_index(PARAMS, arm2, state, obs)
        if ev.contact or ev.d < 0.05:
            continue
        s2 = ArmState(state.theta + dt * state.theta_dot, state.theta_dot)
        o2 = safety.ObstacleKinematics(obs.p_r + dt * obs.v_r, obs.v_r,
                                       obs.accel_bound)
        ev2 = safety.evaluate_index(PARAMS, arm2, s2, o2)
        fd = (ev2.d - ev.d) / dt
        assert ev.d_dot == pytest.approx(fd, abs=1e-3)
        checked += 1
    assert checked > 100


# -- half-space ---------------------------------------------------------------


def test_halfspace_inactive_below_threshold(arm2):
    hs = safety.safe_halfspace(PARAMS, arm2, ArmState([0, 0], [0, 0]),
                               static_obs([0.5, 5.0]))
    assert math.isinf(hs.S) and hs.S > 0


def test_halfspace_pushes_away_from_obstacle():
    # near-one-link arm pointing at a close static obstacle along +x
    arm = ArmParams([1.0, 1e-6], [0.0, 0.0], [-math.pi, -math.pi],
                    [math.pi, math.pi], [10.0, 10.0], [0.0, 0.0])
    state = ArmState([0.0, 0.0], [0.0, 0.0])
    obs = safety.ObstacleKinematics([1.0, 0.3], [0.0, -2.0], 0.0)
    ev = safety.evaluate_index(PARAMS, arm, state, obs)
    assert ev.phi >= 0
    hs = safety.safe_halfspace(PARAMS, arm, state, obs)
    # rotating the link away from the obstacle (negative joint 1) must be
    # the constraint-satisfying direction
    assert hs.L[0] > 0


def test_halfspace_worst_case_phi_dot_bound(arm2, rng):
    """For u on the constraint boundary, the realized phi-dot under any
    admissible obstacle acceleration stays at or below -eta_R (to first
    order).  This is the contract the half-space encodes."""
    dt = 1e-5
    checked = 0
    for _ in range(400):
        state = sample_state(rng, arm2)
        obs = sample_obs(rng, accel_bound=1.0)
        ev = safety.evaluate_index(PARAMS, arm2, state, obs)
        if ev.contact or ev.d < 0.08 or ev.phi < 0:
            continue
        try:
            hs = safety.safe_halfspace(PARAMS, arm2, state, obs)
        except safety.SingularConfigurationError:
            continue
        if not math.isfinite(hs.S):
            continue
        # pick a boundary control: L u = S (minimum-norm solution)
        u = hs.L * (hs.S / float(hs.L @ hs.L))
        if np.max(np.abs(u)) > 50.0:
            continue
        worst = -math.inf
        for ang in np.linspace(0, 2 * math.pi, 12, endpoint=False):
            a_c = obs.accel_bound * np.array([math.cos(ang), math.sin(ang)])
            s2 = step_dynamics(
                ArmParams(arm2.link_lengths, arm2.base_position,
                          arm2.joint_lower, arm2.joint_upper,
                          [100.0, 100.0], arm2.capsule_radius),
                state, ControlInput(u), dt)
            o2 = safety.ObstacleKinematics(
                obs.p_r + dt * obs.v_r + 0.5 * dt * dt * a_c,
                obs.v_r + dt * a_c, obs.accel_bound)
            ev2 = safety.evaluate_index(PARAMS, arm2, s2, o2)
            worst = max(worst, (ev2.phi - ev.phi) / dt)
        assert worst <= -PARAMS.eta_R + 1e-2
        checked += 1
    assert checked > 50


# -- filter -------------------------------------------------------------------


def test_filter_identity_when_safe(arm2):
    state = ArmState([0, 0], [0, 0])
    obs = static_obs([0.5, 5.0])
    out = safety.filter_control(PARAMS, arm2, state, obs,
                                ControlInput([1.0, -1.0]), dt=0.01)
    assert not out.safety_active
    np.testing.assert_allclose(out.u.theta_ddot, [1.0, -1.0])


def test_filter_respects_box(arm2, rng):
    for _ in range(50):
        state = sample_state(rng, arm2)
        obs = sample_obs(rng)
        u_ref = rng.uniform(-20, 20, 2)
        out = safety.filter_control(PARAMS, arm2, state, obs,
                                    ControlInput(u_ref), dt=0.01)
        assert np.all(np.abs(out.u.theta_ddot) <= arm2.max_accel + 1e-9)


def test_filter_idempotent(arm2, rng):
    checked = 0
    for _ in range(100):
        state = sample_state(rng, arm2)
        obs = sample_obs(rng)
        u_ref = rng.uniform(-8, 8, 2)
        out1 = safety.filter_control(PARAMS, arm2, state, obs,
                                     ControlInput(u_ref), dt=0.01)
        if out1.brake:
            continue
        out2 = safety.filter_control(PARAMS, arm2, state, obs, out1.u, dt=0.01)
        np.testing.assert_allclose(out2.u.theta_ddot, out1.u.theta_ddot,
                                   atol=1e-6)
        checked += 1
    assert checked > 50


def test_filter_matches_grid_oracle(arm2, rng):
    """Filtered control matches brute-force search over the box."""
    checked = 0
    grid = np.linspace(-8, 8, 161)
    gx, gy = np.meshgrid(grid, grid)
    cand = np.stack([gx.ravel(), gy.ravel()], axis=1)
    for _ in range(250):
        state = sample_state(rng, arm2)
        obs = sample_obs(rng)
        ev = safety.evaluate_index(PARAMS, arm2, state, obs)
        if ev.contact or ev.phi < 0:
            continue
        try:
            hs = safety.safe_halfspace(PARAMS, arm2, state, obs)
        except safety.SingularConfigurationError:
            continue
        if not math.isfinite(hs.S):
            continue
        u_ref = rng.uniform(-8, 8, 2)
        out = safety.filter_control(PARAMS, arm2, state, obs,
                                    ControlInput(u_ref), dt=0.01)
        ok = cand @ hs.L <= hs.S
        if not ok.any():
            assert out.brake
            continue
        feas = cand[ok]
        best = feas[np.argmin(np.sum((feas - u_ref) ** 2, axis=1))]
        # the filter output must be feasible and at least as close to the
        # reference as the best grid point (the grid is a subset of the box)
        u = out.u.theta_ddot
        assert float(hs.L @ u) <= hs.S + 1e-6
        assert np.linalg.norm(u - u_ref) <= np.linalg.norm(best - u_ref) + 1e-6
        checked += 1
    assert checked > 20


def test_filter_brake_on_infeasible(arm2):
    # enormous adversarial obstacle acceleration makes the half-space
    # incompatible with the control box
    state = ArmState([0.0, 0.0], [1.0, 0.0])
    obs = safety.ObstacleKinematics([0.5, 0.3], [0.0, -1.0], 500.0)
    out = safety.filter_control(PARAMS, arm2, state, obs,
                                ControlInput([0.0, 0.0]), dt=0.01)
    assert out.brake
    np.testing.assert_allclose(out.u.theta_ddot,
                               np.clip(-state.theta_dot / 0.01,
                                       -arm2.max_accel, arm2.max_accel))


def test_activation_threshold_keeps_constraint_in_band(arm2):
    state = ArmState([0.0, 0.0], [0.0, 0.0])
    # phi slightly negative: inactive at threshold 0, active at -0.2
    obs = safety.ObstacleKinematics([0.5, 0.5], [0.0, 0.0], 0.0)
    ev = safety.evaluate_index(PARAMS, arm2, state, obs)
    assert -0.2 < ev.phi < 0
    out0 = safety.filter_control(PARAMS, arm2, state, obs,
                                 ControlInput([0.0, 5.0]), dt=0.01)
    assert not out0.safety_active
    out1 = safety.filter_control(PARAMS, arm2, state, obs,
                                 ControlInput([0.0, 5.0]), dt=0.01,
                                 activation_threshold=-0.2)
    assert out1.safety_active


def test_params_validation():
    with pytest.raises(ValueError):
        safety.SafetyIndexParams(D=0.01, k_phi=1.0, eta_R=0.1, d_min=0.2)
    with pytest.raises(ValueError):
        safety.SafetyIndexParams(D=0.16, k_phi=0.0, eta_R=0.1, d_min=0.2)
    p = safety.SafetyIndexParams.default_for(0.2)
    assert p.D == pytest.approx(0.16)
    assert p.hysteresis == pytest.approx(0.02 * p.D)


def test_check_index_feasibility(arm2):
    good = safety.SafetyIndexParams(D=0.16, k_phi=1.0, eta_R=0.1, d_min=0.2)
    ok, witness = safety.check_index_feasibility(good, arm2, speed_bound=1.0,
                                                 accel_bound=0.0,
                                                 n_samples=2000)
    assert ok and witness is None
    weak = safety.SafetyIndexParams(D=0.16, k_phi=1e-4, eta_R=0.1, d_min=0.2)
    arm_weak = ArmParams(arm2.link_lengths, arm2.base_position,
                         arm2.joint_lower, arm2.joint_upper, [0.01, 0.01],
                         arm2.capsule_radius)
    ok, witness = safety.check_index_feasibility(weak, arm_weak,
                                                 speed_bound=1.0,
                                                 accel_bound=5.0,
                                                 n_samples=2000)
    assert not ok and witness is not None

import numpy as np
import pytest

from safearm import human
from safearm.planner import Trajectory


def make_ctx(unit_arm):
    return human.FeatureContext(unit_arm, goal=[1.5, 1.5],
                                robot_theta=np.array([0.5, 0.5]))


def test_builtin_features_shape_and_units(unit_arm):
    ctx = make_ctx(unit_arm)
    Phi = human.builtin_features(np.array([1.0, -1.0]), np.array([0.3, 0.4]),
                                 ctx)
    assert Phi.shape == (2, 4)
    np.testing.assert_allclose(Phi[:, 0], 1.0)
    assert np.linalg.norm(Phi[:, 1]) == pytest.approx(1.0)  # unit goal direction
    assert np.linalg.norm(Phi[:, 3]) == pytest.approx(1.0)  # unit velocity


def test_builtin_features_zero_velocity(unit_arm):
    Phi = human.builtin_features(np.array([1.0, -1.0]), np.zeros(2),
                                 make_ctx(unit_arm))
    np.testing.assert_allclose(Phi[:, 3], 0.0)


def synthesize(rng, unit_arm, a_true, n_steps, noise=0.0):
    """Driven trajectory with persistent excitation; yields (Phi, x_dot)."""
    ctx0 = make_ctx(unit_arm)
    pos = np.array([1.2, 0.3])
    vel = np.array([0.1, 0.0])
    for k in range(n_steps):
        goal = np.array([1.5 * np.cos(0.05 * k), 1.5 * np.sin(0.07 * k)])
        ctx = human.FeatureContext(unit_arm, goal, ctx0.robot_theta)
        Phi = human.builtin_features(pos, vel, ctx)
        x_dot = Phi @ a_true + noise * rng.normal(size=2)
        yield Phi, x_dot
        vel = x_dot
        pos = pos + 0.02 * vel
        if np.linalg.norm(pos) > 3:
            pos = pos * (0.5 / np.linalg.norm(pos))


def test_rls_recovers_coefficients(rng, unit_arm):
    a_true = np.array([0.05, 0.6, 0.2, 0.15])
    model = human.ReactiveModel(np.zeros(4))
    for Phi, x_dot in synthesize(rng, unit_arm, a_true, 500):
        model = human.rls_update(model, x_dot, Phi)
    err = np.linalg.norm(model.coefficients - a_true) / np.linalg.norm(a_true)
    assert err < 0.05


def test_rls_tracks_drift(rng, unit_arm):
    a1 = np.array([0.0, 0.8, 0.1, 0.1])
    a2 = np.array([0.1, 0.2, 0.5, 0.2])
    model = human.ReactiveModel(np.zeros(4), forgetting_factor=0.97)
    for Phi, x_dot in synthesize(rng, unit_arm, a1, 400):
        model = human.rls_update(model, x_dot, Phi)
    for Phi, x_dot in synthesize(rng, unit_arm, a2, 400):
        model = human.rls_update(model, x_dot, Phi)
    err = np.linalg.norm(model.coefficients - a2) / np.linalg.norm(a2)
    assert err < 0.15


def test_rls_residual_window(rng, unit_arm):
    model = human.ReactiveModel(np.zeros(4))
    for Phi, x_dot in synthesize(rng, unit_arm, np.array([0, 0.5, 0, 0.2]),
                                 120):
        model = human.rls_update(model, x_dot, Phi)
    assert len(model.residuals) <= 50
    assert model.residual_rms >= 0.0


def test_rls_rejects_nonfinite(unit_arm):
    model = human.ReactiveModel(np.zeros(4))
    with pytest.raises(ValueError):
        human.rls_update(model, np.zeros(2), np.full((2, 4), np.nan))


def test_predict_constant_velocity_formula():
    est = human.ObstacleEstimate([1.0, 2.0], [0.5, -0.5], 2.0, 3.0)
    path = human.predict_constant_velocity(est, 4, 0.1)
    np.testing.assert_allclose(path.samples[0], [1.0, 2.0])
    np.testing.assert_allclose(path.samples[4], [1.2, 1.8])
    np.testing.assert_allclose(path.radius_profile,
                               0.5 * 3.0 * (np.arange(5) * 0.1) ** 2)


def test_predict_constant_velocity_validation():
    est = human.ObstacleEstimate([0, 0], [0, 0], 1.0, 1.0)
    with pytest.raises(ValueError):
        human.predict_constant_velocity(est, 0, 0.1)


def test_predict_reactive_speed_clamped(unit_arm):
    model = human.ReactiveModel(np.array([5.0, 5.0, 0.0, 0.0]))
    est = human.ObstacleEstimate([1.0, 0.0], [0.0, 0.0], 0.4, 1.0)
    plan = Trajectory(np.zeros((6, 2)), 0.1)
    path = human.predict_reactive(model, est, plan, make_ctx(unit_arm), 0.1)
    speeds = np.linalg.norm(np.diff(path.samples, axis=0), axis=1) / 0.1
    assert np.all(speeds <= 0.4 + 1e-9)
    assert path.h == 5


def test_predict_reactive_uncertainty_grows(unit_arm, rng):
    model = human.ReactiveModel(np.zeros(4))
    for Phi, x_dot in synthesize(rng, unit_arm, np.array([0, 0.5, 0, 0.2]),
                                 100, noise=0.05):
        model = human.rls_update(model, x_dot, Phi)
    est = human.ObstacleEstimate([1.0, 0.0], [0.1, 0.0], 1.0, 1.0)
    plan = Trajectory(np.zeros((5, 2)), 0.1)
    path = human.predict_reactive(model, est, plan, make_ctx(unit_arm), 0.1)
    assert path.radius_profile[0] == 0.0
    assert np.all(np.diff(path.radius_profile) >= 0)
    assert path.radius_profile[-1] > 0

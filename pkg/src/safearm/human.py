"""Obstacle estimation and prediction.

The obstacle (a human hand in the scenarios) is a planar point with
bounded speed and acceleration.  Two predictors are provided: a
constant-velocity rollout with a quadratically growing uncertainty cone,
and a feature-based reactive model x_dot = sum_j a_j * phi_j(x) whose
coefficients are adapted online by recursive least squares with
forgetting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arm import ArmParams, closest_point_to

_COV_FLOOR = 1e-8
_GOAL_DEADZONE = 1e-3
_RMS_WINDOW = 50


@dataclass
class ObstacleEstimate:
    position: np.ndarray
    velocity: np.ndarray
    speed_bound: float
    accel_bound: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)
        if self.speed_bound < 0 or self.accel_bound < 0:
            raise ValueError("bounds must be >= 0")


@dataclass
class PredictedPath:
    samples: np.ndarray        # (h+1, 2)
    radius_profile: np.ndarray  # (h+1,)
    dt: float
    degraded: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.radius_profile = np.asarray(self.radius_profile, dtype=float)
        if self.samples.shape[0] != self.radius_profile.shape[0]:
            raise ValueError("samples and radius_profile lengths differ")

    @property
    def h(self) -> int:
        return self.samples.shape[0] - 1


BUILTIN_FEATURE_NAMES = ("constant", "to_goal", "away_from_robot", "velocity_dir")


@dataclass
class FeatureContext:
    """Inputs the builtin features need beyond the obstacle state."""
    arm: ArmParams
    goal: np.ndarray
    robot_theta: np.ndarray

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float).reshape(2)
        self.robot_theta = np.asarray(self.robot_theta, dtype=float)


def builtin_features(position: np.ndarray, velocity: np.ndarray,
                     ctx: FeatureContext) -> np.ndarray:
    """Default feature matrix, 2 x 4: constant drift, goal seeking,
    robot repulsion (scaled 1/max(d, 0.1)), and velocity persistence."""
    cols = np.zeros((2, 4))
    cols[:, 0] = 1.0
    to_goal = ctx.goal - position
    dist_goal = float(np.linalg.norm(to_goal))
    if dist_goal > _GOAL_DEADZONE:
        cols[:, 1] = to_goal / dist_goal
    cp = closest_point_to(ctx.arm, ctx.robot_theta, position)
    away = position - cp.point_c
    d = float(np.linalg.norm(away))
    if d > 1e-12:
        cols[:, 2] = (away / d) / max(d, 0.1)
    speed = float(np.linalg.norm(velocity))
    if speed > 1e-12:
        cols[:, 3] = velocity / speed
    return cols


@dataclass
class ReactiveModel:
    coefficients: np.ndarray
    features: tuple[str, ...] = BUILTIN_FEATURE_NAMES
    covariance: np.ndarray | None = None
    forgetting_factor: float = 0.995
    residuals: list = field(default_factory=list)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float).reshape(-1)
        k = self.coefficients.shape[0]
        if self.covariance is None:
            self.covariance = 100.0 * np.eye(k)
        else:
            self.covariance = np.asarray(self.covariance, dtype=float).reshape(k, k)
        if not (0.9 < self.forgetting_factor <= 1.0):
            raise ValueError("forgetting_factor must be in (0.9, 1]")

    @property
    def residual_rms(self) -> float:
        if not self.residuals:
            return 0.0
        return float(np.sqrt(np.mean(np.square(self.residuals))))

    def copy(self) -> "ReactiveModel":
        return ReactiveModel(self.coefficients.copy(), self.features,
                             self.covariance.copy(), self.forgetting_factor,
                             list(self.residuals))


def rls_update(model: ReactiveModel, observed_xdot: np.ndarray,
               feature_values: np.ndarray) -> ReactiveModel:
    """One recursive least squares step with forgetting.

    feature_values is the 2 x k feature matrix Phi so that the model
    predicts x_dot = Phi a.  The covariance is symmetrized and eigenvalue
    floored after the update.
    """
    y = np.asarray(observed_xdot, dtype=float).reshape(2)
    Phi = np.asarray(feature_values, dtype=float)
    if not np.all(np.isfinite(Phi)):
        raise ValueError("feature_values must be finite")
    lam = model.forgetting_factor
    P = model.covariance
    a = model.coefficients
    S = lam * np.eye(2) + Phi @ P @ Phi.T
    K = P @ Phi.T @ np.linalg.inv(S)
    resid = y - Phi @ a
    a_new = a + K @ resid
    P_new = (P - K @ Phi @ P) / lam
    P_new = 0.5 * (P_new + P_new.T)
    w, V = np.linalg.eigh(P_new)
    P_new = (V * np.maximum(w, _COV_FLOOR)) @ V.T
    out = ReactiveModel(a_new, model.features, P_new, lam, list(model.residuals))
    out.residuals.append(float(np.linalg.norm(resid)))
    if len(out.residuals) > _RMS_WINDOW:
        out.residuals = out.residuals[-_RMS_WINDOW:]
    return out


def predict_constant_velocity(est: ObstacleEstimate, h: int, dt: float) -> PredictedPath:
    """Mean path at constant velocity; uncertainty radius 0.5*a_max*t^2."""
    if h < 1 or dt <= 0:
        raise ValueError("h must be >= 1 and dt > 0")
    t = np.arange(h + 1) * dt
    samples = est.position[None, :] + t[:, None] * est.velocity[None, :]
    radii = 0.5 * est.accel_bound * t ** 2
    return PredictedPath(samples, radii, dt)


def _clamp_speed(v: np.ndarray, bound: float) -> np.ndarray:
    s = float(np.linalg.norm(v))
    if bound > 0 and s > bound:
        return v * (bound / s)
    return v


def predict_reactive(model: ReactiveModel, est: ObstacleEstimate, robot_plan,
                     ctx_base: FeatureContext, dt: float) -> PredictedPath:
    """Forward-Euler rollout of the reactive model along the robot plan.

    The prediction horizon follows the plan's waypoint count.  Predicted
    speeds are clamped to est.speed_bound.  On feature failure falls back
    to constant velocity with the degraded flag set.
    """
    waypoints = np.asarray(robot_plan.waypoints, dtype=float)
    h = waypoints.shape[0] - 1
    try:
        pos = est.position.copy()
        vel = est.velocity.copy()
        samples = np.empty((h + 1, 2))
        samples[0] = pos
        for q in range(h):
            ctx = FeatureContext(ctx_base.arm, ctx_base.goal, waypoints[q])
            Phi = builtin_features(pos, vel, ctx)
            vel = _clamp_speed(Phi @ model.coefficients, est.speed_bound)
            pos = pos + vel * dt
            samples[q + 1] = pos
    except Exception:
        out = predict_constant_velocity(est, max(h, 1), dt)
        out.degraded = True
        return out
    radii = model.residual_rms * np.arange(h + 1, dtype=float)
    return PredictedPath(samples, radii, dt)

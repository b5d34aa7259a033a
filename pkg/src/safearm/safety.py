"""Short-term safety controller.

Maintains a safety index phi = D - d^2 - k_phi * d_dot over the distance d
between the arm and a moving point obstacle, derives the half-space of
safe joint accelerations L u <= S, and projects reference controls onto
the admissible set by a small QP.  When phi < 0 the system is safe and no
constraint is imposed (S = +inf).

The obstacle acceleration is unknown but norm-bounded; S is minimized over
that ball, i.e. the constraint is computed against the worst admissible
obstacle acceleration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import qp
from .arm import (ArmParams, ArmState, ControlInput, closest_point_to,
                  jacobian_at, jacobian_dot_times_qdot)

_SINGULAR_EPS = 1e-9


class SingularConfigurationError(RuntimeError):
    """The safe direction vanished; the caller should fall back to braking."""


@dataclass(frozen=True)
class SafetyIndexParams:
    D: float
    k_phi: float
    eta_R: float
    d_min: float
    hysteresis: float | None = None  # defaults to 0.02 * D

    def __post_init__(self):
        if self.d_min <= 0:
            raise ValueError("d_min must be positive")
        if self.D <= self.d_min ** 2:
            raise ValueError("D must exceed d_min^2")
        if self.k_phi <= 0 or self.eta_R <= 0:
            raise ValueError("k_phi and eta_R must be positive")
        if self.hysteresis is None:
            object.__setattr__(self, "hysteresis", 0.02 * self.D)

    @classmethod
    def default_for(cls, d_min: float, k_phi: float = 1.0, eta_R: float = 0.1):
        return cls(D=(2.0 * d_min) ** 2, k_phi=k_phi, eta_R=eta_R, d_min=d_min)


@dataclass
class ObstacleKinematics:
    p_r: np.ndarray
    v_r: np.ndarray
    accel_bound: float

    def __post_init__(self):
        self.p_r = np.asarray(self.p_r, dtype=float).reshape(2)
        self.v_r = np.asarray(self.v_r, dtype=float).reshape(2)
        if self.accel_bound < 0:
            raise ValueError("accel_bound must be >= 0")


@dataclass
class SafeHalfspace:
    L: np.ndarray
    S: float
    phi: float


@dataclass
class IndexEval:
    """Intermediate quantities shared by the index and half-space computations."""

    phi: float
    d: float          # effective distance (centerline minus capsule radius)
    d_center: float   # centerline distance
    d_dot: float
    d_vec: np.ndarray  # c - p_r
    v_rel: np.ndarray  # c_dot - p_r_dot
    link_index: int
    link_fraction: float
    contact: bool


def evaluate_index(params: SafetyIndexParams, arm: ArmParams, state: ArmState,
                   obs: ObstacleKinematics) -> IndexEval:
    cp = closest_point_to(arm, state.theta, obs.p_r)
    radius = float(arm.capsule_radius[cp.link_index])
    d_center = cp.distance
    d = d_center - radius
    if d <= 0 or d_center < 1e-12:
        return IndexEval(phi=math.inf, d=max(d, 0.0), d_center=d_center, d_dot=0.0,
                         d_vec=cp.point_c - obs.p_r, v_rel=np.zeros(2),
                         link_index=cp.link_index, link_fraction=cp.link_fraction,
                         contact=True)
    J = jacobian_at(arm, state.theta, cp.link_index, cp.link_fraction)
    c_dot = J @ state.theta_dot
    d_vec = cp.point_c - obs.p_r
    v_rel = c_dot - obs.v_r
    d_dot = float(d_vec @ v_rel) / d_center
    phi = params.D - d * d - params.k_phi * d_dot
    return IndexEval(phi=phi, d=d, d_center=d_center, d_dot=d_dot, d_vec=d_vec,
                     v_rel=v_rel, link_index=cp.link_index,
                     link_fraction=cp.link_fraction, contact=False)


def safety_index(params: SafetyIndexParams, arm: ArmParams, state: ArmState,
                 obs: ObstacleKinematics) -> float:
    """phi = D - d^2 - k_phi * d_dot; +inf on contact."""
    return evaluate_index(params, arm, state, obs).phi


_FD_EPS = 1e-6


def _index_drift(params: SafetyIndexParams, arm: ArmParams, state: ArmState,
                 obs: ObstacleKinematics) -> float:
    """Directional derivative of phi along the uncontrolled motion.

    phi is differentiated numerically in theta and in the obstacle position:
    the closest point slides along the capsule as the configuration changes,
    so the point-mass closed form (which treats it as a fixed material point)
    overestimates the curvature relief when the obstacle moves parallel to a
    link.  Central differences capture the true segment-distance behaviour.
    """

    def phi_at(theta: np.ndarray, c: np.ndarray) -> float:
        probe = ObstacleKinematics(c, obs.v_r, obs.accel_bound)
        return evaluate_index(params, arm, ArmState(theta, state.theta_dot),
                              probe).phi

    # drift is the directional derivative of phi along the joint flow
    # (theta_dot, v_r), so one central difference along that direction
    # suffices instead of one per coordinate.
    speed = math.sqrt(float(state.theta_dot @ state.theta_dot)
                      + float(obs.v_r @ obs.v_r))
    if speed == 0.0:
        return 0.0
    hi = phi_at(state.theta + _FD_EPS * state.theta_dot,
                obs.p_r + _FD_EPS * obs.v_r)
    lo = phi_at(state.theta - _FD_EPS * state.theta_dot,
                obs.p_r - _FD_EPS * obs.v_r)
    if not (math.isfinite(hi) and math.isfinite(lo)):
        return math.inf
    return (hi - lo) / (2.0 * _FD_EPS)


def safe_halfspace(params: SafetyIndexParams, arm: ArmParams, state: ArmState,
                   obs: ObstacleKinematics,
                   activation_threshold: float = 0.0) -> SafeHalfspace:
    """Linear control constraint L u <= S keeping phi decreasing.

    phi_dot is affine in the commanded acceleration: phi_dot = drift + L u
    plus the obstacle-acceleration term, which is taken at its worst case on
    the ball of radius obs.accel_bound (|dphi/dv_c| = k_phi, so the worst
    contribution is k_phi * accel_bound).  When phi is below
    activation_threshold the constraint is inactive (S = +inf);
    activation_threshold <= 0 lets the caller keep the constraint active
    inside a hysteresis band.
    """
    ev = evaluate_index(params, arm, state, obs)
    if ev.contact:
        # no usable direction at contact; treat as maximally constrained
        n = arm.n
        return SafeHalfspace(L=np.zeros(n), S=-math.inf, phi=ev.phi)
    J = jacobian_at(arm, state.theta, ev.link_index, ev.link_fraction)
    dc = ev.d_center
    L = -params.k_phi * (ev.d_vec @ J) / dc
    if ev.phi < activation_threshold:
        return SafeHalfspace(L=L, S=math.inf, phi=ev.phi)
    if np.linalg.norm(L) < _SINGULAR_EPS * params.k_phi:
        raise SingularConfigurationError(
            "safe direction degenerate (closest point Jacobian orthogonal to d)")
    drift = _index_drift(params, arm, state, obs)
    if not math.isfinite(drift):
        return SafeHalfspace(L=L, S=-math.inf, phi=ev.phi)
    S = -params.eta_R - drift - params.k_phi * obs.accel_bound
    return SafeHalfspace(L=L, S=float(S), phi=ev.phi)


@dataclass
class FilteredControl:
    u: ControlInput
    safety_active: bool
    brake: bool
    phi: float
    d: float
    S: float


def emergency_brake(arm: ArmParams, state: ArmState, dt: float) -> ControlInput:
    """Decelerate every joint to rest as fast as the bounds allow."""
    u = np.clip(-state.theta_dot / dt, -arm.max_accel, arm.max_accel)
    return ControlInput(u)


def filter_control(params: SafetyIndexParams, arm: ArmParams, state: ArmState,
                   obs: ObstacleKinematics, u_ref: ControlInput,
                   Q: np.ndarray | None = None, dt: float = 0.01,
                   activation_threshold: float = 0.0) -> FilteredControl:
    """Project the reference control onto the box bounds and safe half-space.

    Falls back to an emergency brake when the constraint set is empty or
    the configuration is degenerate.
    """
    n = arm.n
    u0 = np.asarray(u_ref.theta_ddot, dtype=float).reshape(n)
    try:
        hs = safe_halfspace(params, arm, state, obs, activation_threshold)
    except SingularConfigurationError:
        ev = evaluate_index(params, arm, state, obs)
        return FilteredControl(emergency_brake(arm, state, dt), True, True,
                               ev.phi, ev.d, math.nan)
    if hs.S == -math.inf:  # contact
        return FilteredControl(emergency_brake(arm, state, dt), True, True,
                               hs.phi, 0.0, hs.S)
    if not math.isfinite(hs.S):
        u = np.clip(u0, -arm.max_accel, arm.max_accel)
        return FilteredControl(ControlInput(u), False, False, hs.phi,
                               _distance(params, arm, state, obs), hs.S)

    # exact feasibility pre-check on box + one half-space
    min_lu = float(np.sum(np.where(hs.L >= 0, -hs.L * arm.max_accel, -hs.L * -arm.max_accel)))
    if min_lu > hs.S + 1e-12:
        return FilteredControl(emergency_brake(arm, state, dt), True, True,
                               hs.phi, _distance(params, arm, state, obs), hs.S)

    # clipped reference already safe -> it is the box optimum, skip the QP
    u_clip = np.clip(u0, -arm.max_accel, arm.max_accel)
    if Q is None and float(hs.L @ u_clip) <= hs.S + 1e-12:
        modified = bool(np.max(np.abs(u_clip - u0)) > 1e-9)
        return FilteredControl(ControlInput(u_clip), modified, False, hs.phi,
                               _distance(params, arm, state, obs), hs.S)

    Qm = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    problem = qp.QpProblem(P=2.0 * Qm, q=-2.0 * Qm @ u0,
                           A=hs.L.reshape(1, n), b=np.array([hs.S]),
                           lower=-arm.max_accel, upper=arm.max_accel)
    sol = qp.solve(problem)
    if sol.status != qp.OPTIMAL:
        return FilteredControl(emergency_brake(arm, state, dt), True, True,
                               hs.phi, _distance(params, arm, state, obs), hs.S)
    modified = bool(np.max(np.abs(sol.x_star - u0)) > 1e-9)
    return FilteredControl(ControlInput(sol.x_star), modified, False, hs.phi,
                           _distance(params, arm, state, obs), hs.S)


def _distance(params: SafetyIndexParams, arm: ArmParams, state: ArmState,
              obs: ObstacleKinematics) -> float:
    cp = closest_point_to(arm, state.theta, obs.p_r)
    return cp.distance - float(arm.capsule_radius[cp.link_index])


def check_index_feasibility(params: SafetyIndexParams, arm: ArmParams,
                            speed_bound: float, accel_bound: float,
                            base_exclusion_radius: float | None = None,
                            n_samples: int = 10_000, seed: int = 0):
    """Sample boundary states (phi = 0, closest point at the end point) and
    verify a safe control exists at each.  Returns (ok, witness or None).
    """
    if base_exclusion_radius is None:
        base_exclusion_radius = 0.3 * arm.reach
    rng = np.random.default_rng(seed)
    n = arm.n
    checked = 0
    for _ in range(n_samples):
        theta = rng.uniform(arm.joint_lower, arm.joint_upper)
        theta_dot = rng.uniform(-1.0, 1.0, size=n)
        ang = rng.uniform(0.0, 2.0 * np.pi)
        direction = np.array([np.cos(ang), np.sin(ang)])  # unit vector c -> away from obstacle
        speed = rng.uniform(0.0, speed_bound) if speed_bound > 0 else 0.0
        vel_ang = rng.uniform(0.0, 2.0 * np.pi)
        v_r = speed * np.array([np.cos(vel_ang), np.sin(vel_ang)])
        J = jacobian_at(arm, theta, n - 1, 1.0)
        c = (arm.base_position
             + np.array([np.sum(arm.link_lengths * np.cos(np.cumsum(theta))),
                         np.sum(arm.link_lengths * np.sin(np.cumsum(theta)))]))
        v_rel = J @ theta_dot - v_r
        d_dot = float(direction @ v_rel)
        dd = params.D - params.k_phi * d_dot
        if dd <= params.d_min ** 2:
            continue  # phi = 0 not reachable at an admissible distance
        d = math.sqrt(dd)
        radius = float(arm.capsule_radius[n - 1])
        p_r = c - (d + radius) * direction
        if np.linalg.norm(p_r - arm.base_position) < base_exclusion_radius:
            continue
        state = ArmState(theta, theta_dot)
        obs = ObstacleKinematics(p_r, v_r, accel_bound)
        ev = evaluate_index(params, arm, state, obs)
        if ev.contact or ev.link_index != n - 1 or abs(ev.phi) > 1e-6:
            continue  # a nearer link intercepts; not the intended boundary sample
        try:
            hs = safe_halfspace(params, arm, state, obs)
        except SingularConfigurationError:
            return False, {"theta": theta, "theta_dot": theta_dot, "p_r": p_r, "v_r": v_r,
                           "reason": "singular"}
        min_lu = float(np.sum(-np.abs(hs.L) * arm.max_accel))
        if min_lu > hs.S:
            return False, {"theta": theta, "theta_dot": theta_dot, "p_r": p_r, "v_r": v_r,
                           "reason": "no admissible control", "L": hs.L, "S": hs.S}
        checked += 1
    return checked > 0, None

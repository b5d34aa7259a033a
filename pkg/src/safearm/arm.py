"""Planar n-link arm: kinematics, capsule geometry, distance queries, dynamics.

All quantities are in SI units (m, rad, s). The arm is a chain of rigid
links in the plane; each link carries a capsule (segment + radius) as its
collision geometry.  Dynamics are a double integrator in joint space:
the control input is the joint acceleration vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UnreachableTargetError(ValueError):
    """Raised when an inverse-kinematics target lies outside the reach annulus."""


def _as_vec(x, name: str, n: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if n is not None and v.shape[0] != n:
        raise ValueError(f"{name}: expected {n} entries, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name}: non-finite entries")
    return v


@dataclass(frozen=True)
class ArmParams:
    """Geometric and actuation parameters of the planar arm.

    capsule_radius is per link; max_accel is the per-joint magnitude bound
    on the commanded joint acceleration.
    """

    link_lengths: np.ndarray
    base_position: np.ndarray
    joint_lower: np.ndarray
    joint_upper: np.ndarray
    max_accel: np.ndarray
    capsule_radius: np.ndarray

    def __post_init__(self):
        ll = _as_vec(self.link_lengths, "link_lengths")
        n = ll.shape[0]
        object.__setattr__(self, "link_lengths", ll)
        object.__setattr__(self, "base_position", _as_vec(self.base_position, "base_position", 2))
        object.__setattr__(self, "joint_lower", _as_vec(self.joint_lower, "joint_lower", n))
        object.__setattr__(self, "joint_upper", _as_vec(self.joint_upper, "joint_upper", n))
        object.__setattr__(self, "max_accel", _as_vec(self.max_accel, "max_accel", n))
        object.__setattr__(self, "capsule_radius", _as_vec(self.capsule_radius, "capsule_radius", n))
        if np.any(ll <= 0):
            raise ValueError("link_lengths must be positive")
        if np.any(self.joint_lower >= self.joint_upper):
            raise ValueError("joint_lower must be < joint_upper elementwise")
        if np.any(self.max_accel <= 0):
            raise ValueError("max_accel must be positive")
        if np.any(self.capsule_radius < 0):
            raise ValueError("capsule_radius must be >= 0")

    @property
    def n(self) -> int:
        return self.link_lengths.shape[0]

    @property
    def reach(self) -> float:
        return float(np.sum(self.link_lengths))


@dataclass
class ArmState:
    theta: np.ndarray
    theta_dot: np.ndarray

    def __post_init__(self):
        self.theta = _as_vec(self.theta, "theta")
        self.theta_dot = _as_vec(self.theta_dot, "theta_dot", self.theta.shape[0])

    def copy(self) -> "ArmState":
        return ArmState(self.theta.copy(), self.theta_dot.copy())


@dataclass
class ControlInput:
    theta_ddot: np.ndarray

    def __post_init__(self):
        self.theta_ddot = _as_vec(self.theta_ddot, "theta_ddot")


@dataclass
class Capsule:
    endpoint_a: np.ndarray
    endpoint_b: np.ndarray
    radius: float

    def __post_init__(self):
        self.endpoint_a = _as_vec(self.endpoint_a, "endpoint_a", 2)
        self.endpoint_b = _as_vec(self.endpoint_b, "endpoint_b", 2)
        if self.radius < 0:
            raise ValueError("capsule radius must be >= 0")


@dataclass
class ClosestPointResult:
    point_c: np.ndarray
    link_index: int
    link_fraction: float
    distance: float


def forward_kinematics(params: ArmParams, theta) -> np.ndarray:
    """Joint positions of the chain, base first, end point last: (n+1, 2)."""
    theta = _as_vec(theta, "theta", params.n)
    phi = np.cumsum(theta)
    steps = params.link_lengths[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    pts = np.empty((params.n + 1, 2))
    pts[0] = params.base_position
    pts[1:] = params.base_position + np.cumsum(steps, axis=0)
    return pts


def point_on_arm(params: ArmParams, theta, link_index: int, link_fraction: float) -> np.ndarray:
    """Position of the material point at `link_fraction` along link `link_index`."""
    pts = forward_kinematics(params, theta)
    a, b = pts[link_index], pts[link_index + 1]
    return a + link_fraction * (b - a)


def _check_point_args(params: ArmParams, link_index: int, link_fraction: float):
    if not (0 <= link_index < params.n):
        raise ValueError(f"link_index {link_index} out of range for {params.n}-link arm")
    if not (0.0 <= link_fraction <= 1.0):
        raise ValueError(f"link_fraction {link_fraction} not in [0, 1]")


def jacobian_at(params: ArmParams, theta, link_index: int, link_fraction: float) -> np.ndarray:
    """2 x n Jacobian of the material point (link_index, link_fraction).

    Columns for joints distal to the point are zero.
    """
    _check_point_args(params, link_index, link_fraction)
    theta = _as_vec(theta, "theta", params.n)
    phi = np.cumsum(theta)
    # effective length of link i as seen by the material point
    eff = np.zeros(params.n)
    eff[:link_index] = params.link_lengths[:link_index]
    eff[link_index] = link_fraction * params.link_lengths[link_index]
    # d p / d theta_j = sum_{i >= j} eff_i * perp(phi_i)
    perp = np.stack([-np.sin(phi), np.cos(phi)], axis=0)  # (2, n)
    terms = perp * eff[None, :]
    J = np.zeros((2, params.n))
    # reversed cumulative sum over i >= j
    J[:, : link_index + 1] = np.cumsum(terms[:, link_index::-1], axis=1)[:, ::-1]
    return J


def jacobian_dot_times_qdot(params: ArmParams, state: ArmState,
                            link_index: int, link_fraction: float) -> np.ndarray:
    """Centripetal term H_c = dJ/dt * theta_dot for the material point.

    The point acceleration under joint acceleration u is J_c u + H_c.
    """
    _check_point_args(params, link_index, link_fraction)
    phi = np.cumsum(state.theta)
    omega = np.cumsum(state.theta_dot)  # absolute angular rate of each link
    eff = np.zeros(params.n)
    eff[:link_index] = params.link_lengths[:link_index]
    eff[link_index] = link_fraction * params.link_lengths[link_index]
    unit = np.stack([np.cos(phi), np.sin(phi)], axis=0)
    return -(unit * (eff * omega ** 2)[None, :]).sum(axis=1)


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray):
    """(distance, fraction, closest point) from point p to segment ab."""
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-16:
        frac = 0.0
    else:
        frac = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    c = a + frac * ab
    return float(np.linalg.norm(p - c)), frac, c


def closest_point_to(params: ArmParams, theta, p) -> ClosestPointResult:
    """Closest point on the arm centerline to p.

    Ties break to the lowest link index, then the lowest fraction.
    """
    p = _as_vec(p, "p", 2)
    pts = forward_kinematics(params, theta)
    best = None
    for k in range(params.n):
        d, frac, c = point_segment_distance(p, pts[k], pts[k + 1])
        if best is None or d < best.distance:
            best = ClosestPointResult(point_c=c, link_index=k, link_fraction=frac, distance=d)
    return best


def arm_capsules(params: ArmParams, theta) -> list[Capsule]:
    pts = forward_kinematics(params, theta)
    return [Capsule(pts[k], pts[k + 1], float(params.capsule_radius[k]))
            for k in range(params.n)]


def step_dynamics(params: ArmParams, state: ArmState, u: ControlInput, dt: float) -> ArmState:
    """Exact discrete double-integrator step with joint-limit clamping.

    A joint that hits its limit is clamped there with its velocity zeroed.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    a = _as_vec(u.theta_ddot, "theta_ddot", params.n)
    theta = state.theta + state.theta_dot * dt + 0.5 * a * dt * dt
    theta_dot = state.theta_dot + a * dt
    low_hit = theta < params.joint_lower
    high_hit = theta > params.joint_upper
    theta = np.clip(theta, params.joint_lower, params.joint_upper)
    theta_dot = np.where(low_hit | high_hit, 0.0, theta_dot)
    return ArmState(theta, theta_dot)


def wrap_angle(a: np.ndarray) -> np.ndarray:
    """Wrap to [-pi, pi)."""
    return (a + np.pi) % (2 * np.pi) - np.pi


def inverse_kinematics_2link(params: ArmParams, p, elbow_sign: int = 1) -> np.ndarray:
    """Joint angles placing the end point of a 2-link arm at p.

    elbow_sign selects the branch (+1 elbow up, -1 elbow down); angles are
    returned wrapped to [-pi, pi).  Raises UnreachableTargetError when p
    lies outside the annulus [|l1 - l2|, l1 + l2].
    """
    if params.n != 2:
        raise ValueError("inverse_kinematics_2link requires a 2-link arm")
    if elbow_sign not in (1, -1):
        raise ValueError("elbow_sign must be +1 or -1")
    p = _as_vec(p, "p", 2)
    l1, l2 = params.link_lengths
    r = p - params.base_position
    rr = float(r @ r)
    cos_t2 = (rr - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if cos_t2 > 1.0 + 1e-12 or cos_t2 < -1.0 - 1e-12:
        raise UnreachableTargetError(
            f"target {p.tolist()} outside reach annulus [{abs(l1 - l2):.6g}, {l1 + l2:.6g}]")
    cos_t2 = float(np.clip(cos_t2, -1.0, 1.0))
    t2 = elbow_sign * float(np.arccos(cos_t2))
    t1 = float(np.arctan2(r[1], r[0]) - np.arctan2(l2 * np.sin(t2), l1 + l2 * np.cos(t2)))
    return wrap_angle(np.array([t1, t2]))

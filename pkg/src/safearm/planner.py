"""Long-term trajectory optimization by sequential convexification.

The planner discretizes the joint trajectory into h+1 waypoints, replaces
the nonconvex collision constraints by linear inequalities obtained from
the signed distance and its gradient at a reference trajectory, and
iterates quadratic programs until the cost stops descending.  A generic
trust-region sequential-linearization solver over the same problem is
provided as a baseline for benchmarking.

Obstacles are convex task-space primitives: disks (moving, uncertainty
inflated), convex polygons (static boxes), and half-plane danger zones.
Each convexified region is intersected with a per-step Lipschitz trust box
(|d| changes at most `reach` per radian of any joint), which makes the
region a certified subset of the true feasible set whenever the reference
waypoint is itself feasible.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from . import qp
from .arm import ArmParams, ArmState, forward_kinematics, jacobian_at, point_segment_distance
from .human import PredictedPath

_FD_STEP = 1e-5
_GRAD_EPS = 1e-12


@dataclass
class Trajectory:
    waypoints: np.ndarray  # (h+1, n)
    dt: float

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if self.waypoints.shape[0] < 2:
            raise ValueError("a trajectory needs at least two waypoints")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def h(self) -> int:
        return self.waypoints.shape[0] - 1

    @property
    def n(self) -> int:
        return self.waypoints.shape[1]

    def copy(self) -> "Trajectory":
        return Trajectory(self.waypoints.copy(), self.dt)


@dataclass
class PlannerConfig:
    w1: float = 1.0
    w2: float = 0.1
    d_min_longterm: float = 0.25
    cfs_tol: float = 1e-4
    max_cfs_iter: int = 20
    h_max: int = 6
    escape_radius: float = 0.5       # trust-box radius used while the reference penetrates
    discretization_margin: float = 0.02  # extra clearance covering between-knot motion
    gradient_mode: str = "analytic"  # "analytic" or "numeric"
    vel_lower: np.ndarray | None = None  # per-joint rad/s; defaults to joint limits
    vel_upper: np.ndarray | None = None

    def __post_init__(self):
        if self.d_min_longterm <= 0 or self.cfs_tol <= 0:
            raise ValueError("d_min_longterm and cfs_tol must be positive")
        if self.gradient_mode not in ("analytic", "numeric"):
            raise ValueError("gradient_mode must be 'analytic' or 'numeric'")


# ---------------------------------------------------------------------------
# obstacle primitives


class Disk:
    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=float).reshape(2)
        if radius < 0:
            raise ValueError("disk radius must be >= 0")
        self.radius = float(radius)

    def segment_distance(self, a: np.ndarray, b: np.ndarray) -> float:
        d, _, _ = point_segment_distance(self.center, a, b)
        return d - self.radius

    def __repr__(self):
        return f"Disk({self.center.tolist()}, r={self.radius})"


class HalfplaneZone:
    """Danger zone {p : normal . p >= offset}."""

    def __init__(self, normal, offset: float):
        n = np.asarray(normal, dtype=float).reshape(2)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(offset) / np.linalg.norm(n)

    def segment_distance(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.offset - max(float(self.normal @ a), float(self.normal @ b))


class ConvexPolygon:
    """Convex polygon given by vertices in counter-clockwise order."""

    def __init__(self, vertices):
        self.vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
        if self.vertices.shape[0] < 3:
            raise ValueError("polygon needs at least 3 vertices")

    def _contains(self, p: np.ndarray) -> bool:
        v = self.vertices
        for i in range(v.shape[0]):
            e = v[(i + 1) % v.shape[0]] - v[i]
            if e[0] * (p[1] - v[i][1]) - e[1] * (p[0] - v[i][0]) < 0:
                return False
        return True

    def _depth(self, p: np.ndarray) -> float:
        """Penetration depth of an interior point (distance to boundary)."""
        v = self.vertices
        best = math.inf
        for i in range(v.shape[0]):
            d, _, _ = point_segment_distance(p, v[i], v[(i + 1) % v.shape[0]])
            best = min(best, d)
        return best

    def segment_distance(self, a: np.ndarray, b: np.ndarray) -> float:
        v = self.vertices
        inside_a, inside_b = self._contains(a), self._contains(b)
        if inside_a or inside_b:
            depth = max(self._depth(a) if inside_a else 0.0,
                        self._depth(b) if inside_b else 0.0)
            return -depth
        best = math.inf
        crossed = False
        for i in range(v.shape[0]):
            e0, e1 = v[i], v[(i + 1) % v.shape[0]]
            d = _segment_segment_distance(a, b, e0, e1)
            if d == 0.0:
                crossed = True
            best = min(best, d)
        if crossed:
            # endpoints outside but the segment crosses the polygon
            pts = a + np.linspace(0, 1, 33)[:, None] * (b - a)
            depth = max((self._depth(p) for p in pts if self._contains(p)), default=0.0)
            return -depth
        return best


def _segment_segment_distance(a0, a1, b0, b1) -> float:
    d1, d2 = a1 - a0, b1 - b0
    r = a0 - b0
    cross = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(cross) > 1e-14:
        t = (r[1] * d2[0] - r[0] * d2[1]) / cross
        s = (r[1] * d1[0] - r[0] * d1[1]) / cross
        if 0.0 <= t <= 1.0 and 0.0 <= s <= 1.0:
            return 0.0
    cands = [point_segment_distance(a0, b0, b1)[0],
             point_segment_distance(a1, b0, b1)[0],
             point_segment_distance(b0, a0, a1)[0],
             point_segment_distance(b1, a0, a1)[0]]
    return min(cands)


# ---------------------------------------------------------------------------
# signed distance and gradients


def signed_distance(theta, obstacle, arm: ArmParams, d_required: float = 0.0,
                    gradient_mode: str = "analytic"):
    """(value, gradient) of the clearance constraint at configuration theta.

    value = min over links of (centerline distance to obstacle) minus the
    link capsule radius minus d_required; negative when penetrating.
    """
    theta = np.asarray(theta, dtype=float).reshape(arm.n)
    value = _distance_value(theta, obstacle, arm, d_required)
    if gradient_mode == "numeric":
        grad = _numeric_gradient(theta, obstacle, arm, d_required)
    else:
        grad = _analytic_gradient(theta, obstacle, arm, d_required)
        if grad is None:
            grad = _numeric_gradient(theta, obstacle, arm, d_required)
    return value, grad


def _distance_value(theta, obstacle, arm: ArmParams, d_required: float) -> float:
    pts = forward_kinematics(arm, theta)
    best = math.inf
    for k in range(arm.n):
        d = obstacle.segment_distance(pts[k], pts[k + 1]) - float(arm.capsule_radius[k])
        best = min(best, d)
    return best - d_required


def _numeric_gradient(theta, obstacle, arm, d_required) -> np.ndarray:
    grad = np.zeros(arm.n)
    for j in range(arm.n):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += _FD_STEP
        tm[j] -= _FD_STEP
        grad[j] = (_distance_value(tp, obstacle, arm, d_required)
                   - _distance_value(tm, obstacle, arm, d_required)) / (2 * _FD_STEP)
    return grad


def _analytic_gradient(theta, obstacle, arm, d_required):
    if isinstance(obstacle, Disk):
        pts = forward_kinematics(arm, theta)
        best = (math.inf, 0, 0.0, None)
        for k in range(arm.n):
            d, frac, c = point_segment_distance(obstacle.center, pts[k], pts[k + 1])
            eff = d - float(arm.capsule_radius[k])
            if eff < best[0]:
                best = (eff, k, frac, c)
        _, k, frac, c = best
        u = c - obstacle.center
        nrm = float(np.linalg.norm(u))
        if nrm < _GRAD_EPS:
            return None
        return (u / nrm) @ jacobian_at(arm, theta, k, frac)
    if isinstance(obstacle, HalfplaneZone):
        pts = forward_kinematics(arm, theta)
        proj = pts @ obstacle.normal
        # extreme point over the chain; ties go to the most distal point
        idx = int(np.flatnonzero(proj >= proj.max() - 1e-12)[-1])
        if idx == 0:
            return np.zeros(arm.n)  # base point is fixed
        return -obstacle.normal @ jacobian_at(arm, theta, idx - 1, 1.0)
    return None  # polygons use the numeric path


def signed_distance_batch(thetas: np.ndarray, obstacle, arm: ArmParams,
                          d_required: float = 0.0) -> np.ndarray:
    """Vectorized constraint values for a batch of configurations (m, n)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    phi = np.cumsum(thetas, axis=1)  # (m, n)
    steps = arm.link_lengths[None, :, None] * np.stack([np.cos(phi), np.sin(phi)], axis=2)
    pts = np.concatenate([np.broadcast_to(arm.base_position, (thetas.shape[0], 1, 2)),
                          arm.base_position + np.cumsum(steps, axis=1)], axis=1)
    if isinstance(obstacle, Disk):
        a, b = pts[:, :-1, :], pts[:, 1:, :]
        ab = b - a
        denom = np.maximum(np.einsum("mkd,mkd->mk", ab, ab), 1e-16)
        t = np.clip(np.einsum("mkd,mkd->mk", obstacle.center - a, ab) / denom, 0.0, 1.0)
        c = a + t[:, :, None] * ab
        d = np.linalg.norm(c - obstacle.center, axis=2) - obstacle.radius
        return (d - arm.capsule_radius[None, :]).min(axis=1) - d_required
    if isinstance(obstacle, HalfplaneZone):
        proj = pts @ obstacle.normal  # (m, n+1)
        seg_max = np.maximum(proj[:, :-1], proj[:, 1:])
        d = obstacle.offset - seg_max
        return (d - arm.capsule_radius[None, :]).min(axis=1) - d_required
    if isinstance(obstacle, ConvexPolygon):
        # exact when the arm is clear of the polygon; when a link penetrates,
        # the value is negative but may understate the depth for a link whose
        # endpoints both lie outside (the scalar path samples the chord)
        v = obstacle.vertices                                   # (E, 2)
        edge = np.roll(v, -1, axis=0) - v                       # (E, 2)
        a, b = pts[:, :-1, :], pts[:, 1:, :]                    # (m, n, 2)
        ab = b - a
        rel = pts[:, :, None, :] - v                            # (m, n+1, E, 2)
        crossv = edge[None, None, :, 0] * rel[..., 1] - edge[None, None, :, 1] * rel[..., 0]
        inside = np.all(crossv >= 0.0, axis=2)                  # (m, n+1)
        ee = np.maximum(np.einsum("ed,ed->e", edge, edge), 1e-16)
        t = np.clip(np.einsum("mpec,ec->mpe", rel, edge) / ee, 0.0, 1.0)
        pdist = np.linalg.norm(rel - t[..., None] * edge, axis=3)
        pedge = pdist.min(axis=2)                               # (m, n+1)
        denom = np.maximum(np.einsum("mkd,mkd->mk", ab, ab), 1e-16)
        rv = v[None, None, :, :] - a[:, :, None, :]             # (m, n, E, 2)
        s = np.clip(np.einsum("mkec,mkc->mke", rv, ab) / denom[:, :, None], 0.0, 1.0)
        vdist = np.linalg.norm(rv - s[..., None] * ab[:, :, None, :], axis=3)
        cand = np.minimum(np.minimum(pdist[:, :-1].min(axis=2),
                                     pdist[:, 1:].min(axis=2)),
                          vdist.min(axis=2))                    # (m, n)
        r = a[:, :, None, :] - v[None, None]
        crs = ab[:, :, None, 0] * edge[None, None, :, 1] - ab[:, :, None, 1] * edge[None, None, :, 0]
        safe = np.where(np.abs(crs) > 1e-14, crs, 1.0)
        tt = (r[..., 1] * edge[None, None, :, 0] - r[..., 0] * edge[None, None, :, 1]) / safe
        ss = (r[..., 1] * ab[:, :, None, 0] - r[..., 0] * ab[:, :, None, 1]) / safe
        hit = (np.abs(crs) > 1e-14) & (tt >= 0) & (tt <= 1) & (ss >= 0) & (ss <= 1)
        inside_any = inside[:, :-1] | inside[:, 1:]             # (m, n)
        depth = np.maximum(np.where(inside[:, :-1], pedge[:, :-1], 0.0),
                           np.where(inside[:, 1:], pedge[:, 1:], 0.0))
        dist = np.where(inside_any, -depth,
                        np.where(hit.any(axis=2), 0.0, cand))
        return (dist - arm.capsule_radius[None, :]).min(axis=1) - d_required
    return np.array([_distance_value(t, obstacle, arm, d_required) for t in thetas])


# ---------------------------------------------------------------------------
# convex feasible region


@dataclass
class StepRegion:
    A: np.ndarray        # rows a . theta <= b
    b: np.ndarray
    lower: np.ndarray    # joint box intersected with the trust box
    upper: np.ndarray


@dataclass
class ConvexRegion:
    steps: list
    reference: Trajectory
    unplannable_steps: list = field(default_factory=list)

    def contains(self, q: int, theta: np.ndarray, tol: float = 1e-9) -> bool:
        s = self.steps[q]
        if np.any(theta < s.lower - tol) or np.any(theta > s.upper + tol):
            return False
        return not (s.A.shape[0] and np.any(s.A @ theta - s.b > tol))

    def sample(self, q: int, rng: np.random.Generator, count: int,
               max_tries: int = 200) -> np.ndarray:
        """Uniform rejection samples from step q of the region."""
        s = self.steps[q]
        out = []
        for _ in range(max_tries):
            cand = rng.uniform(s.lower, s.upper, size=(count, s.lower.shape[0]))
            if s.A.shape[0]:
                ok = np.all(cand @ s.A.T <= s.b[None, :] + 1e-12, axis=1)
                cand = cand[ok]
            out.append(cand)
            if sum(c.shape[0] for c in out) >= count:
                break
        return np.vstack(out)[:count]


def obstacles_at_step(q: int, predicted: PredictedPath | None, static_obstacles) -> list:
    obs = list(static_obstacles)
    if predicted is not None:
        qq = min(q, predicted.h)
        obs.append(Disk(predicted.samples[qq], float(predicted.radius_profile[qq])))
    return obs


def convexify(reference: Trajectory, predicted: PredictedPath | None, arm: ArmParams,
              config: PlannerConfig, static_obstacles=(),
              d_required: float | None = None) -> ConvexRegion:
    """Linearized per-step feasible region around the reference trajectory.

    One inequality per (step, convex obstacle piece), each a first-order
    lower bound of the signed distance at the reference waypoint, plus a
    Lipschitz trust box guaranteeing the region stays inside the true
    feasible set when the reference waypoint is feasible.
    """
    if d_required is None:
        d_required = config.d_min_longterm
    n = arm.n
    lip = arm.reach * n  # |d| changes at most reach per radian, summed over joints
    steps = []
    unplannable = []
    for q in range(reference.h + 1):
        r = reference.waypoints[q]
        rows_a, rows_b = [], []
        min_val = math.inf
        for piece in obstacles_at_step(q, predicted, static_obstacles):
            val, grad = signed_distance(r, piece, arm, d_required, config.gradient_mode)
            min_val = min(min_val, val)
            if val < -0.5 * arm.reach:
                unplannable.append(q)
            gnorm = float(np.linalg.norm(grad))
            if gnorm < _GRAD_EPS:
                if val < 0:
                    unplannable.append(q)
                continue  # constraint locally insensitive and satisfied
            # val + grad . (theta - r) >= 0
            rows_a.append(-grad)
            rows_b.append(val - float(grad @ r))
        if math.isinf(min_val):
            lower, upper = arm.joint_lower.copy(), arm.joint_upper.copy()
        else:
            rho = min_val / lip if min_val > 0 else config.escape_radius
            lower = np.maximum(arm.joint_lower, r - rho)
            upper = np.minimum(arm.joint_upper, r + rho)
        A = np.vstack(rows_a) if rows_a else np.zeros((0, n))
        b = np.asarray(rows_b, dtype=float)
        steps.append(StepRegion(A=A, b=b, lower=lower, upper=upper))
    return ConvexRegion(steps=steps, reference=reference.copy(),
                        unplannable_steps=sorted(set(unplannable)))


# ---------------------------------------------------------------------------
# cost


def build_cost(reference: Trajectory, config: PlannerConfig):
    """Quadratic cost (P, q) over the stacked waypoints.

    objective(x) = 1/2 x'Px + q'x + const, equal to
    w1 ||x - r||^2 + w2 ||second difference(x)||^2 / dt^4.
    """
    hp1, n = reference.waypoints.shape
    N = hp1 * n
    K = second_difference_operator(hp1, n)
    P = 2.0 * (config.w1 * np.eye(N) + config.w2 * (K.T @ K) / reference.dt ** 4)
    qv = -2.0 * config.w1 * reference.waypoints.reshape(-1)
    return P, qv


def second_difference_operator(hp1: int, n: int) -> np.ndarray:
    if hp1 < 3:
        return np.zeros((0, hp1 * n))
    K = np.zeros(((hp1 - 2) * n, hp1 * n))
    for q in range(hp1 - 2):
        for j in range(n):
            row = q * n + j
            K[row, q * n + j] = 1.0
            K[row, (q + 1) * n + j] = -2.0
            K[row, (q + 2) * n + j] = 1.0
    return K


def trajectory_cost(traj: Trajectory, reference: Trajectory, config: PlannerConfig) -> float:
    """Direct summation of the tracking + acceleration cost."""
    diff = traj.waypoints - reference.waypoints
    cost = config.w1 * float(np.sum(diff * diff))
    for q in range(1, traj.h):
        acc = (traj.waypoints[q + 1] - 2 * traj.waypoints[q] + traj.waypoints[q - 1]) / traj.dt ** 2
        cost += config.w2 * float(acc @ acc)
    return cost


# ---------------------------------------------------------------------------
# solvers


@dataclass
class PlannerStats:
    iterations: int = 0
    costs: list = field(default_factory=list)
    convexify_time: float = 0.0
    qp_time: float = 0.0
    total_time: float = 0.0
    status: str = "optimal"
    first_feasible_iteration: int | None = None
    feasible: bool = False


def collision_feasible(traj: Trajectory, predicted, arm, static_obstacles,
                       d_required: float, tol: float = 1e-9) -> bool:
    for q in range(traj.h + 1):
        for piece in obstacles_at_step(q, predicted, static_obstacles):
            if _distance_value(traj.waypoints[q], piece, arm, d_required) < -tol:
                return False
    return True


def dense_clearance(traj: Trajectory, predicted, arm: ArmParams,
                    static_obstacles, samples_per_segment: int = 24) -> float:
    """Minimum obstacle clearance along the linearly interpolated trajectory.

    Waypoint constraints alone can step over an obstacle when the
    discretization is coarse; this evaluates in-between configurations
    (with the predicted obstacle interpolated in time) and returns the
    worst raw clearance found.
    """
    worst = math.inf
    fracs = np.linspace(0.0, 1.0, samples_per_segment + 1)
    for q in range(traj.h):
        for s in fracs:
            theta = (1 - s) * traj.waypoints[q] + s * traj.waypoints[q + 1]
            pieces = list(static_obstacles)
            if predicted is not None:
                qa = min(q, predicted.h)
                qb = min(q + 1, predicted.h)
                center = (1 - s) * predicted.samples[qa] + s * predicted.samples[qb]
                radius = (1 - s) * float(predicted.radius_profile[qa]) \
                    + s * float(predicted.radius_profile[qb])
                pieces.append(Disk(center, radius))
            for piece in pieces:
                worst = min(worst, _distance_value(theta, piece, arm, 0.0))
    return worst


def _subdivide(traj: Trajectory) -> Trajectory:
    """Insert the midpoint of every segment and halve the timestep."""
    w = traj.waypoints
    out = np.empty((2 * traj.h + 1, w.shape[1]))
    out[0::2] = w
    out[1::2] = 0.5 * (w[:-1] + w[1:])
    return Trajectory(out, traj.dt / 2.0)


def _grid_detour(start_theta: np.ndarray, goal_theta: np.ndarray, pieces,
                 arm: ArmParams, d_required: float,
                 step: float = 0.1) -> np.ndarray | None:
    """Shortest grid path between two configurations clearing all pieces.

    A straight joint-space reference that cuts through an obstacle leaves
    the convexified solver in the wrong homotopy class: waypoint-sampled
    constraints are happy to straddle a small obstacle.  An A* search on
    a coarse joint grid picks a detour on one side; the result is a
    polyline of grid nodes (including the exact endpoints), or None when
    no clear path exists at this resolution.
    """
    # search window: the start/goal span padded by a half-turn per joint
    # (room for an elbow flip), clipped to the joint box -- wide joint
    # limits would otherwise blow the grid up to millions of nodes
    lo = np.maximum(arm.joint_lower,
                    np.minimum(start_theta, goal_theta) - math.pi)
    hi = np.minimum(arm.joint_upper,
                    np.maximum(start_theta, goal_theta) + math.pi)
    axes = [np.arange(lo[j], hi[j] + step / 2, step) for j in range(arm.n)]
    if any(a.size < 2 for a in axes):
        return None
    shape = tuple(a.size for a in axes)
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, arm.n)
    free = np.ones(grid.shape[0], dtype=bool)
    for piece in pieces:
        free &= signed_distance_batch(grid, piece, arm, d_required) >= 0.0
    free = free.reshape(shape)

    def nearest_free(theta):
        idx = tuple(int(np.clip(round((theta[j] - lo[j]) / step), 0, shape[j] - 1))
                    for j in range(arm.n))
        if free[idx]:
            return idx
        order = np.argsort(np.linalg.norm(grid - theta, axis=1))
        for flat in order[:400]:
            cand = np.unravel_index(flat, shape)
            if free[cand]:
                return cand
        return None

    src, dst = nearest_free(start_theta), nearest_free(goal_theta)
    if src is None or dst is None:
        return None
    # vectorized grid graph: one edge bundle per move direction (the
    # opposite directions come for free from the undirected solver)
    moves = [d for d in itertools.product((-1, 0, 1), repeat=arm.n)
             if any(d)][: (3 ** arm.n - 1) // 2]
    ids = np.arange(grid.shape[0]).reshape(shape)
    rows, cols, data = [], [], []
    for mv in moves:
        a_sl = tuple(slice(max(0, -d), shape[j] - max(0, d))
                     for j, d in enumerate(mv))
        b_sl = tuple(slice(max(0, d), shape[j] - max(0, -d))
                     for j, d in enumerate(mv))
        ok = free[a_sl] & free[b_sl]
        rows.append(ids[a_sl][ok])
        cols.append(ids[b_sl][ok])
        data.append(np.full(int(ok.sum()), math.hypot(*mv)))
    graph = scipy.sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.shape[0],) * 2)
    src_flat = int(np.ravel_multi_index(src, shape))
    dst_flat = int(np.ravel_multi_index(dst, shape))
    dist, pred = scipy.sparse.csgraph.dijkstra(
        graph, directed=False, indices=src_flat, return_predecessors=True)
    if not np.isfinite(dist[dst_flat]):
        return None
    path = [dst_flat]
    while path[-1] != src_flat:
        path.append(int(pred[path[-1]]))
    nodes = grid[np.array(path[::-1])]
    return np.vstack([start_theta, nodes, goal_theta])


def _resample_polyline(points: np.ndarray, count: int) -> np.ndarray:
    """count+1 points evenly spaced by arc length along a polyline."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0:
        return np.tile(points[0], (count + 1, 1))
    targets = np.linspace(0.0, total, count + 1)
    out = np.empty((count + 1, points.shape[1]))
    for j in range(points.shape[1]):
        out[:, j] = np.interp(targets, s, points[:, j])
    return out


def _repair_reference(traj: Trajectory, predicted: PredictedPath | None,
                      arm: ArmParams, config: PlannerConfig, static_obstacles,
                      d_required: float) -> Trajectory:
    """Push constraint-violating interior waypoints out of the obstacles.

    Midpoints inserted by subdivision can sit inside the required margin,
    sometimes at a critical point of the distance (arm pointing straight
    at the obstacle) where the gradient vanishes and linearization cannot
    recover.  Plain gradient ascent on the worst clearance, with a
    deterministic axis probe when the gradient is degenerate, restores a
    usable reference.
    """
    out = traj.copy()
    for q in range(1, traj.h):
        theta = out.waypoints[q]
        pieces = obstacles_at_step(q, predicted, static_obstacles)
        if not pieces:
            continue
        if min(float(signed_distance_batch(theta[None], piece, arm, d_required)[0])
               for piece in pieces) >= 0.01:
            continue
        for _ in range(25):
            vals = [signed_distance(theta, piece, arm, d_required, config.gradient_mode)
                    for piece in pieces]
            val, grad = min(vals, key=lambda vg: vg[0])
            if val >= 0.01:  # small buffer so the trust box has width
                break
            gnorm = float(np.linalg.norm(grad))
            if gnorm < 0.05:
                probes = [theta + s * 0.05 * e
                          for e in np.eye(arm.n) for s in (1.0, -1.0)]
                theta = max(probes, key=lambda t: min(
                    _distance_value(t, piece, arm, d_required) for piece in pieces))
            else:
                theta = theta + min(0.1, (0.01 - val) / gnorm) * grad / gnorm
            theta = np.clip(theta, arm.joint_lower, arm.joint_upper)
        out.waypoints[q] = theta
    return out


def _subdivide_prediction(pred: PredictedPath) -> PredictedPath:
    """Refine a predicted path to match a subdivided trajectory grid."""
    s, r = pred.samples, pred.radius_profile
    samples = np.empty((2 * pred.h + 1, s.shape[1]))
    samples[0::2] = s
    samples[1::2] = 0.5 * (s[:-1] + s[1:])
    radii = np.empty(2 * pred.h + 1)
    radii[0::2] = r
    radii[1::2] = 0.5 * (r[:-1] + r[1:])
    return PredictedPath(samples, radii, pred.dt / 2.0, degraded=pred.degraded)


def _velocity_accel_rows(hp1: int, n: int, dt: float, arm: ArmParams,
                         config: PlannerConfig):
    """Finite-difference velocity bounds and acceleration bounds as Gx <= h.

    Velocity rows are emitted only when explicit bounds are configured;
    the acceleration bound is always enforced.
    """
    N = hp1 * n
    rows, rhs = [], []
    if config.vel_lower is not None or config.vel_upper is not None:
        vlo = (np.asarray(config.vel_lower, dtype=float)
               if config.vel_lower is not None else np.full(n, -np.inf))
        vhi = (np.asarray(config.vel_upper, dtype=float)
               if config.vel_upper is not None else np.full(n, np.inf))
        D = np.zeros(((hp1 - 1) * n, N))
        for q in range(hp1 - 1):
            for j in range(n):
                row = q * n + j
                D[row, q * n + j] = -1.0 / dt
                D[row, (q + 1) * n + j] = 1.0 / dt
        hi = np.tile(vhi, hp1 - 1)
        lo = np.tile(-vlo, hp1 - 1)
        rows.append(D[np.isfinite(hi)])
        rhs.append(hi[np.isfinite(hi)])
        rows.append(-D[np.isfinite(lo)])
        rhs.append(lo[np.isfinite(lo)])
    K = second_difference_operator(hp1, n) / dt ** 2
    if K.shape[0]:
        amax = np.tile(arm.max_accel, hp1 - 2)
        rows.append(K)
        rhs.append(amax)
        rows.append(-K)
        rhs.append(amax)
    if not rows:
        return np.zeros((0, N)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)


def _assemble_and_solve(region: ConvexRegion, reference: Trajectory, arm: ArmParams,
                        config: PlannerConfig, start_theta, goal_theta,
                        extra_box: tuple | None = None):
    hp1, n = reference.waypoints.shape
    N = hp1 * n
    P, qv = build_cost(reference, config)
    A_rows, b_rows = [], []
    lower = np.empty(N)
    upper = np.empty(N)
    for q, s in enumerate(region.steps):
        lower[q * n:(q + 1) * n] = s.lower
        upper[q * n:(q + 1) * n] = s.upper
        if s.A.shape[0]:
            lifted = np.zeros((s.A.shape[0], N))
            lifted[:, q * n:(q + 1) * n] = s.A
            A_rows.append(lifted)
            b_rows.append(s.b)
    if extra_box is not None:
        lower = np.maximum(lower, extra_box[0])
        upper = np.minimum(upper, extra_box[1])
    G, hvec = _velocity_accel_rows(hp1, n, reference.dt, arm, config)
    A_rows.append(G)
    b_rows.append(hvec)
    A = np.vstack(A_rows)
    b = np.concatenate(b_rows)
    E = np.zeros((2 * n, N))
    E[:n, :n] = np.eye(n)
    E[n:, -n:] = np.eye(n)
    f = np.concatenate([start_theta, goal_theta])
    sol = qp.solve(qp.QpProblem(P=P, q=qv, A=A, b=b, E=E, f=f, lower=lower, upper=upper))
    return sol


def cfs_solve(initial_reference: Trajectory, predicted: PredictedPath | None,
              boundary, arm: ArmParams, config: PlannerConfig,
              static_obstacles=(), cancel_check=None):
    """Iterate convexify + QP until the cost stops descending.

    An outer loop then checks the densely interpolated result: a coarse
    horizon can satisfy every waypoint constraint yet cut across an
    obstacle between waypoints.  When that happens the trajectory is
    subdivided in time (midpoints inserted, timestep halved) and the
    solve restarts from the refined iterate, so the waypoint constraints
    bind where the chord used to cut.  The reported cost sequence is the
    monotone descent of the final (sufficiently fine) round; the
    iteration budget is shared across rounds.

    boundary is (start: ArmState, goal_theta).  Returns (Trajectory, PlannerStats).
    """
    start, goal_theta = boundary
    goal_theta = np.asarray(goal_theta, dtype=float).reshape(arm.n)
    ref = initial_reference.copy()
    ref.waypoints[0] = start.theta
    ref.waypoints[-1] = goal_theta
    stats = PlannerStats()
    t0 = time.perf_counter()
    d_req = config.d_min_longterm + config.discretization_margin
    if not collision_feasible(ref, predicted, arm, static_obstacles, d_req, tol=0.0):
        # blocked reference: search a detour so the convexified iterations
        # start in a homotopy class that actually clears the obstacles
        pieces, seen = [], set()
        for q in range(ref.h + 1):
            for piece in obstacles_at_step(q, predicted, static_obstacles):
                key = repr(piece)
                if key not in seen:
                    seen.add(key)
                    pieces.append(piece)
        # only search when both endpoints clear every obstacle piece: a goal
        # (or start) parked inside the swept union has no detour, and the
        # caller is better served by the plain infeasible-QP path
        ends_clear = pieces and all(
            _distance_value(ref.waypoints[q], piece, arm, d_req) >= 0.0
            for q in (0, ref.h) for piece in pieces)
        detour = (_grid_detour(ref.waypoints[0], ref.waypoints[-1], pieces,
                               arm, d_req)
                  if ends_clear else None)
        if detour is not None:
            old_len = float(np.sum(np.linalg.norm(np.diff(ref.waypoints, axis=0), axis=1)))
            new_len = float(np.sum(np.linalg.norm(np.diff(detour, axis=0), axis=1)))
            dt = ref.dt * max(1.0, new_len / max(old_len, 1e-9))
            ref = Trajectory(_resample_polyline(detour, ref.h), dt)
    # a goal that itself violates the margin makes the problem infeasible
    # outright (the optimizer pins the final waypoint), so interior repair
    # would be wasted effort
    goal_clear = all(
        _distance_value(goal_theta, piece, arm, d_req) >= 0.0
        for piece in obstacles_at_step(ref.h, predicted, static_obstacles))
    if goal_clear:
        ref = _repair_reference(ref, predicted, arm, config, static_obstacles,
                                d_req)
    tracking_ref = ref.copy()
    best = ref
    k = 0
    prev_cost = None
    for _ in range(4):  # densification rounds (horizon at most 8x the input)
        # refined rounds need room to smooth the inserted kinks: the exact
        # trust boxes would pin an actively-constrained reference in place
        # and make the acceleration rows unsatisfiable
        converged = False
        round_costs: list[float] = []
        prev_cost = None
        while k < config.max_cfs_iter:
            if cancel_check is not None and cancel_check():
                stats.status = "cancelled"
                break
            tc = time.perf_counter()
            region = convexify(ref, predicted, arm, config, static_obstacles,
                               d_required=d_req)
            stats.convexify_time += time.perf_counter() - tc
            if region.unplannable_steps:
                stats.status = "unplannable" if k == 0 else "suboptimal"
                break
            tq = time.perf_counter()
            sol = _assemble_and_solve(region, tracking_ref, arm, config, start.theta, goal_theta)
            stats.qp_time += time.perf_counter() - tq
            if sol.status != qp.OPTIMAL:
                stats.status = "infeasible" if k == 0 else "suboptimal"
                break
            new = Trajectory(sol.x_star.reshape(ref.waypoints.shape), ref.dt)
            cost = trajectory_cost(new, tracking_ref, config)
            round_costs.append(cost)
            k += 1
            stats.iterations = k
            if stats.first_feasible_iteration is None and collision_feasible(
                    new, predicted, arm, static_obstacles, d_req):
                stats.first_feasible_iteration = k - 1
            step = float(np.max(np.abs(new.waypoints - ref.waypoints)))
            best = new
            ref = new
            no_rows = all(s.A.shape[0] == 0 for s in region.steps)
            if no_rows:
                converged = True
                break  # convex instance: one QP is exact
            if prev_cost is not None and 0.0 <= prev_cost - cost < config.cfs_tol * max(1.0, abs(prev_cost)):
                converged = True
                break
            if step < config.cfs_tol:
                converged = True
                break
            prev_cost = cost
        else:
            stats.status = "max_iterations"
        if round_costs:
            # the reported descent is the round that produced the returned
            # trajectory; a refined round that fails before its first
            # iterate leaves the previous round's record in place
            stats.costs = round_costs
        if not converged and stats.status != "max_iterations":
            break
        deficit = config.d_min_longterm - dense_clearance(
            best, predicted, arm, static_obstacles)
        if deficit <= -1e-4:  # small buffer against finer resampling
            break
        ref = _subdivide(best)
        tracking_ref = _subdivide(tracking_ref)
        if predicted is not None:
            predicted = _subdivide_prediction(predicted)
        ref = _repair_reference(ref, predicted, arm, config, static_obstacles, d_req)
        # the refined, repaired trajectory is the best answer so far even if
        # the iteration budget leaves no room for further smoothing
        best = ref
    stats.total_time = time.perf_counter() - t0
    stats.feasible = collision_feasible(best, predicted, arm, static_obstacles,
                                        config.d_min_longterm, tol=1e-6)
    return best, stats


def make_reference(start: ArmState, goal_theta, speed: float, dt: float,
                   arm: ArmParams, h_max: int) -> Trajectory:
    """Straight joint-space interpolation; horizon from end-point path length.

    The timestep is kept at the nominal value even when the horizon cap
    binds: the receding-horizon caller re-plans every cycle, and a longer
    timestep would push later waypoints deep into the growing obstacle
    forecast uncertainty.
    """
    if speed <= 0:
        raise ValueError("speed must be positive")
    goal_theta = np.asarray(goal_theta, dtype=float).reshape(arm.n)
    p0 = forward_kinematics(arm, start.theta)[-1]
    p1 = forward_kinematics(arm, goal_theta)[-1]
    length = float(np.linalg.norm(p1 - p0))
    h = int(np.clip(math.ceil(length / (speed * dt)), 1, h_max))
    alphas = np.linspace(0.0, 1.0, h + 1)[:, None]
    waypoints = (1 - alphas) * start.theta[None, :] + alphas * goal_theta[None, :]
    return Trajectory(waypoints, dt)


def _violation(traj: Trajectory, predicted, arm, static_obstacles, d_required) -> float:
    total = 0.0
    for q in range(traj.h + 1):
        for piece in obstacles_at_step(q, predicted, static_obstacles):
            total += max(0.0, -_distance_value(traj.waypoints[q], piece, arm, d_required))
    return total


def baseline_nlp_solve(initial_reference: Trajectory, predicted: PredictedPath | None,
                       boundary, arm: ArmParams, config: PlannerConfig,
                       static_obstacles=(), max_iter: int = 60,
                       trust_radius: float = 0.2, penalty: float = 200.0):
    """Generic sequential linearization with trust region and merit line search.

    Solves the same discrete problem as cfs_solve; structurally it keeps
    the step-size safeguards that the convex-feasible-set iteration does
    not need, which is exactly what makes it slower.
    """
    start, goal_theta = boundary
    goal_theta = np.asarray(goal_theta, dtype=float).reshape(arm.n)
    x = initial_reference.copy()
    x.waypoints[0] = start.theta
    x.waypoints[-1] = goal_theta
    tracking_ref = x.copy()
    stats = PlannerStats()
    t0 = time.perf_counter()
    d_req = config.d_min_longterm + config.discretization_margin

    def pieces_exist():
        return any(obstacles_at_step(q, predicted, static_obstacles)
                   for q in range(x.h + 1))

    def merit(traj):
        return trajectory_cost(traj, tracking_ref, config) + penalty * _violation(
            traj, predicted, arm, static_obstacles, d_req)

    delta = trust_radius
    numeric_cfg = PlannerConfig(**{**config.__dict__, "gradient_mode": "numeric"})
    for k in range(max_iter):
        tc = time.perf_counter()
        region = _linearize_unboxed(x, predicted, arm, numeric_cfg, static_obstacles, d_req)
        stats.convexify_time += time.perf_counter() - tc
        use_trust = pieces_exist()
        extra = None
        if use_trust:
            flat = x.waypoints.reshape(-1)
            extra = (flat - delta, flat + delta)
        tq = time.perf_counter()
        sol = _assemble_and_solve(region, tracking_ref, arm, config,
                                  start.theta, goal_theta, extra_box=extra)
        stats.qp_time += time.perf_counter() - tq
        if sol.status != qp.OPTIMAL:
            delta *= 0.5
            if delta < 1e-4:
                stats.status = "infeasible" if k == 0 else "suboptimal"
                break
            continue
        cand = Trajectory(sol.x_star.reshape(x.waypoints.shape), x.dt)
        stats.iterations = k + 1
        if not use_trust:
            x = cand
            stats.costs.append(trajectory_cost(x, tracking_ref, config))
            stats.status = "optimal"
            break
        step = cand.waypoints - x.waypoints
        m0 = merit(x)
        alpha, accepted = 1.0, False
        while alpha >= 1.0 / 64.0:
            trial = Trajectory(x.waypoints + alpha * step, x.dt)
            if merit(trial) < m0 - 1e-12:
                x = trial
                accepted = True
                break
            alpha *= 0.5
        stats.costs.append(trajectory_cost(x, tracking_ref, config))
        if not accepted:
            delta *= 0.5
            if delta < 1e-4:
                break
            continue
        delta = min(delta * 1.5, 1.0) if alpha == 1.0 else max(delta * 0.7, 1e-3)
        if float(np.max(np.abs(alpha * step))) < config.cfs_tol:
            break
    else:
        stats.status = "max_iterations"
    # feasibility polish via convex-feasible-set steps if the merit descent
    # stopped short of the constraint boundary
    if not collision_feasible(x, predicted, arm, static_obstacles, d_req) and pieces_exist():
        polish_cfg = PlannerConfig(**{**config.__dict__, "max_cfs_iter": 10})
        x, _ = cfs_solve(x, predicted, (start, goal_theta), arm, polish_cfg, static_obstacles)
    stats.total_time = time.perf_counter() - t0
    stats.feasible = collision_feasible(x, predicted, arm, static_obstacles,
                                        config.d_min_longterm, tol=1e-6)
    if stats.first_feasible_iteration is None and stats.feasible:
        stats.first_feasible_iteration = stats.iterations
    return x, stats


def _linearize_unboxed(reference: Trajectory, predicted, arm, config,
                       static_obstacles, d_required) -> ConvexRegion:
    """Plain linearization without the Lipschitz trust boxes (baseline use)."""
    region = convexify(reference, predicted, arm, config, static_obstacles, d_required)
    for q, s in enumerate(region.steps):
        s.lower = arm.joint_lower.copy()
        s.upper = arm.joint_upper.copy()
    return region

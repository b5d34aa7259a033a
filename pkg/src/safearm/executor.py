"""Two-rate planning and control executor.

A slow efficiency loop replans the long-term trajectory (task state
machine -> reference -> prediction -> sequential convexification) while a
fast loop tracks the installed plan and filters every control through the
short-term safety controller.  The only shared state is the plan slot,
replaced atomically (last writer wins, stale results rejected); the fast
loop never waits on the slow loop.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from . import fsm, human, planner, safety
from .arm import ArmParams, ArmState, ControlInput, forward_kinematics


@dataclass
class LoopRates:
    fast_dt: float = 0.01
    slow_period: float = 0.5

    def __post_init__(self):
        if not (0 < self.fast_dt < self.slow_period):
            raise ValueError("need 0 < fast_dt < slow_period")


@dataclass
class TrackingGains:
    kp: float = 25.0
    kd: float = 10.0
    max_speed: float = 3.0  # rad/s cap on commanded joint velocity

    def __post_init__(self):
        if self.kp <= 0 or self.kd <= 0 or self.max_speed <= 0:
            raise ValueError("gains must be positive")


@dataclass
class TimedPlan:
    trajectory: planner.Trajectory
    start_time: float
    plan_id: int


class PlanSlot:
    """Atomically replaced plan holder; readers always see a complete plan."""

    def __init__(self):
        self._lock = threading.Lock()
        self._plan: TimedPlan | None = None
        self._counter = 0

    def install(self, trajectory: planner.Trajectory, start_time: float,
                now: float, slow_period: float) -> int | None:
        """Install unless the result is stale.  Returns the new plan id."""
        with self._lock:
            if now - start_time > slow_period:
                return None
            self._counter += 1
            self._plan = TimedPlan(trajectory, start_time, self._counter)
            return self._counter

    def read(self) -> TimedPlan | None:
        with self._lock:
            return self._plan


def sample_plan(plan: TimedPlan, t: float):
    """(theta, theta_dot, theta_ddot) of the plan at absolute time t.

    Linear interpolation between waypoints; beyond the final waypoint the
    plan holds its last pose at rest.
    """
    traj = plan.trajectory
    tau = t - plan.start_time
    w, dt = traj.waypoints, traj.dt
    if tau >= traj.h * dt:
        return w[-1].copy(), np.zeros(traj.n), np.zeros(traj.n)
    if tau <= 0.0:
        q, frac = 0, max(tau / dt, 0.0)
    else:
        q = int(tau // dt)
        frac = (tau - q * dt) / dt
    theta = w[q] + frac * (w[q + 1] - w[q])
    theta_dot = (w[q + 1] - w[q]) / dt
    if 1 <= q <= traj.h - 1:
        theta_ddot = (w[q + 1] - 2 * w[q] + w[q - 1]) / dt ** 2
    else:
        theta_ddot = np.zeros(traj.n)
    return theta, theta_dot, theta_ddot


@dataclass
class TickRecord:
    t: float
    u_ref: np.ndarray
    u: np.ndarray
    phi: float
    d: float
    S: float
    safety_active: bool
    brake: bool
    plan_id: int
    phase: fsm.TaskPhase


@dataclass
class ExecutorEvent:
    t: float
    kind: str
    detail: str


@dataclass
class ExecutorConfig:
    rates: LoopRates = field(default_factory=LoopRates)
    gains: TrackingGains = field(default_factory=TrackingGains)
    plan_speed: float = 0.5          # m/s assumed end-point speed for horizons
    plan_dt: float = 0.1             # waypoint spacing of the long-term plan
    compute_delay: float = 0.0       # simulated slow-loop computation time
    planner_enabled: bool = True
    safety_enabled: bool = True


class ParallelExecutor:
    """Deterministic core shared by the simulator and the live service."""

    def __init__(self, arm: ArmParams, safety_params: safety.SafetyIndexParams,
                 planner_config: planner.PlannerConfig, task_ctx: fsm.TaskContext,
                 config: ExecutorConfig | None = None,
                 guard_tol: fsm.GuardTolerances | None = None,
                 static_obstacles=(), reactive_model: human.ReactiveModel | None = None,
                 hold_neutral: bool = False):
        self.arm = arm
        self.safety_params = safety_params
        self.planner_config = planner_config
        self.config = config or ExecutorConfig()
        self.guard_tol = guard_tol or fsm.GuardTolerances()
        self.static_obstacles = tuple(static_obstacles)
        self.task_ctx = task_ctx
        self.phase = fsm.TaskPhase.IDLE
        self.hold_neutral = hold_neutral
        self.reactive_model = reactive_model
        self.slot = PlanSlot()
        self.pending: tuple[TimedPlan, float] | None = None  # (plan, ready_time)
        self.events: list[ExecutorEvent] = []
        self.plan_stats: list[planner.PlannerStats] = []
        self.last_prediction: human.PredictedPath | None = None
        self._engaged = False
        self._prev_features: np.ndarray | None = None
        self._prev_obs_vel: np.ndarray | None = None

    # -- slow loop ---------------------------------------------------------

    def slow_cycle(self, now: float, state: ArmState, est: human.ObstacleEstimate):
        """One planning cycle from a consistent snapshot."""
        arm = fsm.effective_arm(self.arm, self.task_ctx)
        if not self.hold_neutral:
            self.phase, self.task_ctx, phase_events = fsm.advance(
                self.phase, self.task_ctx, state, arm, self.guard_tol, now)
            for ev in phase_events:
                self.events.append(ExecutorEvent(
                    now, "phase", f"{ev.from_phase.value}->{ev.to_phase.value}: {ev.reason}"))
        try:
            goal = (self.task_ctx.neutral_theta if self.hold_neutral
                    else fsm.ending_pose(self.phase, self.task_ctx, arm, self.guard_tol))
        except Exception as exc:  # unreachable pose already aborts in advance()
            self.events.append(ExecutorEvent(now, "plan_failure", str(exc)))
            return None
        if not self.config.planner_enabled:
            traj = planner.Trajectory(np.vstack([state.theta, self.task_ctx.neutral_theta]),
                                      self.config.rates.slow_period)
            self._stage_plan(traj, now)
            return traj
        ref = planner.make_reference(state, goal, self.config.plan_speed,
                                     self.planner_dt, arm, self.planner_config.h_max)
        predicted = self._predict(est, ref, state)
        current = self.slot.read()
        if (current is not None and current.trajectory.h > 1
                and np.allclose(current.trajectory.waypoints[-1], goal, atol=1e-9)
                and planner.collision_feasible(
                    current.trajectory, predicted, arm, self.static_obstacles,
                    self.planner_config.d_min_longterm)):
            self.last_prediction = predicted
            return current.trajectory  # installed plan still clears the forecast
        traj, stats = planner.cfs_solve(ref, predicted, (state, goal), arm,
                                        self.planner_config, self.static_obstacles)
        self.plan_stats.append(stats)
        if stats.status in ("unplannable", "infeasible") or not stats.feasible:
            self.events.append(ExecutorEvent(now, "plan_failure",
                                             f"planner status {stats.status}"))
            return None
        self.last_prediction = predicted
        self._stage_plan(traj, now)
        return traj

    @property
    def planner_dt(self) -> float:
        return self.config.plan_dt

    def _predict(self, est, ref, state) -> human.PredictedPath:
        if self.reactive_model is not None and self.reactive_model.residuals:
            ctx = human.FeatureContext(self.arm, est.position, state.theta)
            return human.predict_reactive(self.reactive_model, est, ref, ctx, ref.dt)
        return human.predict_constant_velocity(est, ref.h, ref.dt)

    def _stage_plan(self, traj: planner.Trajectory, now: float):
        ready = now + self.config.compute_delay
        self.pending = (TimedPlan(traj, now, -1), ready)

    # -- fast loop ----------------------------------------------------------

    def fast_tick(self, now: float, state: ArmState,
                  est: human.ObstacleEstimate) -> TickRecord:
        dt = self.config.rates.fast_dt
        if self.pending is not None and now >= self.pending[1]:
            staged, _ = self.pending
            pid = self.slot.install(staged.trajectory, staged.start_time,
                                    now, self.config.rates.slow_period)
            if pid is None:
                self.events.append(ExecutorEvent(now, "plan_stale",
                                                 "computed plan discarded (start time passed)"))
            self.pending = None
        plan = self.slot.read()
        if plan is None:
            hold = planner.Trajectory(np.vstack([state.theta, state.theta]), dt)
            pid = self.slot.install(hold, now, now, self.config.rates.slow_period)
            plan = self.slot.read()
        theta_p, theta_dot_p, ff = sample_plan(plan, now + dt)
        g = self.config.gains
        u_ref = ff + g.kp * (theta_p - state.theta) + g.kd * (theta_dot_p - state.theta_dot)
        # cap the commanded joint speed so tracking a distant plan sample
        # never builds up more kinetic energy than the brakes can shed
        u_ref = np.clip(u_ref, (-g.max_speed - state.theta_dot) / dt,
                        (g.max_speed - state.theta_dot) / dt)
        arm = fsm.effective_arm(self.arm, self.task_ctx)
        obs = safety.ObstacleKinematics(est.position, est.velocity, est.accel_bound)
        if not self.config.safety_enabled:
            u = np.clip(u_ref, -arm.max_accel, arm.max_accel)
            ev = safety.evaluate_index(self.safety_params, arm, state, obs)
            return TickRecord(now, u_ref, u, ev.phi, ev.d, float("nan"),
                              False, False, plan.plan_id, self.phase)
        # hard switch with hysteresis: engage at phi >= 0, release at
        # phi < -eps_h; the constraint stays enforced inside the band
        threshold = -self.safety_params.hysteresis if self._engaged else 0.0
        out = safety.filter_control(self.safety_params, arm, state, obs,
                                    ControlInput(u_ref), dt=dt,
                                    activation_threshold=threshold)
        if out.brake:
            self.events.append(ExecutorEvent(now, "brake", "safety QP fallback"))
        if self._engaged:
            self._engaged = out.phi >= -self.safety_params.hysteresis
        else:
            self._engaged = out.phi >= 0.0
        return TickRecord(now, u_ref, out.u.theta_ddot, out.phi, out.d, out.S,
                          out.safety_active, out.brake, plan.plan_id, self.phase)

    # -- learning -----------------------------------------------------------

    def observe_obstacle(self, est: human.ObstacleEstimate, observed_xdot: np.ndarray,
                         state: ArmState):
        """Feed one obstacle observation to the reactive model (if any)."""
        if self.reactive_model is None:
            return
        ctx = human.FeatureContext(self.arm, est.position, state.theta)
        Phi = human.builtin_features(est.position, est.velocity, ctx)
        self.reactive_model = human.rls_update(self.reactive_model, observed_xdot, Phi)


def coordination_margin_check(plan: planner.Trajectory, predicted: human.PredictedPath,
                              arm: ArmParams, params: safety.SafetyIndexParams) -> bool:
    """True iff executing the plan against the predicted mean path keeps
    the safety index negative at every step (the long-term margin holds)."""
    if predicted is None:
        return True
    w, dt = plan.waypoints, plan.dt
    for q in range(plan.h + 1):
        theta = w[q]
        theta_dot = ((w[min(q + 1, plan.h)] - w[max(q - 1, 0)])
                     / (dt * (min(q + 1, plan.h) - max(q - 1, 0) or 1)))
        qq = min(q, predicted.h)
        pos = predicted.samples[qq]
        nxt = predicted.samples[min(qq + 1, predicted.h)]
        prv = predicted.samples[max(qq - 1, 0)]
        span = (min(qq + 1, predicted.h) - max(qq - 1, 0)) or 1
        vel = (nxt - prv) / (dt * span)
        obs = safety.ObstacleKinematics(pos, vel, 0.0)
        phi = safety.safety_index(params, arm, ArmState(theta, theta_dot), obs)
        if phi >= 0:
            return False
    return True

"""Eight-phase pick-and-place task state machine.

Phases cycle Idle -> Approach -> GraspPreparation -> Grasp -> Lift ->
Transport -> PlacePreparation -> Release -> Idle.  Each phase contributes
an ending pose (a joint goal) for the long-term planner; transitions fire
when the end point settles near the goal, with a dwell in Grasp/Release.
While the workpiece is carried, the last-link capsule is inflated so the
load is wrapped in the collision geometry.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

from .arm import (ArmParams, ArmState, UnreachableTargetError, forward_kinematics,
                  inverse_kinematics_2link)


class TaskPhase(enum.Enum):
    IDLE = "idle"
    APPROACH = "approach"
    GRASP_PREP = "grasp_preparation"
    GRASP = "grasp"
    LIFT = "lift"
    TRANSPORT = "transport"
    PLACE_PREP = "place_preparation"
    RELEASE = "release"


PHASE_CYCLE = (TaskPhase.IDLE, TaskPhase.APPROACH, TaskPhase.GRASP_PREP, TaskPhase.GRASP,
               TaskPhase.LIFT, TaskPhase.TRANSPORT, TaskPhase.PLACE_PREP, TaskPhase.RELEASE)


def next_phase(phase: TaskPhase) -> TaskPhase:
    i = PHASE_CYCLE.index(phase)
    return PHASE_CYCLE[(i + 1) % len(PHASE_CYCLE)]


@dataclass
class TaskContext:
    workpiece_pose: np.ndarray
    target_box_pose: np.ndarray
    neutral_theta: np.ndarray
    carrying: bool = False
    phase_entry_time: float = 0.0
    elbow_sign: int = 1
    workpiece_radius: float = 0.05

    def __post_init__(self):
        self.workpiece_pose = np.asarray(self.workpiece_pose, dtype=float).reshape(2)
        self.target_box_pose = np.asarray(self.target_box_pose, dtype=float).reshape(2)
        self.neutral_theta = np.asarray(self.neutral_theta, dtype=float)

    def copy(self) -> "TaskContext":
        return dataclasses.replace(self,
                                   workpiece_pose=self.workpiece_pose.copy(),
                                   target_box_pose=self.target_box_pose.copy(),
                                   neutral_theta=self.neutral_theta.copy())


@dataclass
class GuardTolerances:
    position: float = 0.01   # m
    speed: float = 0.05      # rad/s
    dwell: float = 0.3       # s, in Grasp and Release
    hover_offset: float = 0.1
    lift_offset: float = 0.2


@dataclass
class PhaseEvent:
    t: float
    kind: str  # "transition" or "abort"
    from_phase: TaskPhase
    to_phase: TaskPhase
    reason: str


HOVER = np.array([0.0, 1.0])  # hover displacements point up in the plane


def phase_target_point(phase: TaskPhase, ctx: TaskContext,
                       tol: GuardTolerances) -> np.ndarray | None:
    """Task-space target of a phase; None for the joint-space Idle pose."""
    if phase is TaskPhase.IDLE:
        return None
    if phase is TaskPhase.APPROACH:
        return ctx.workpiece_pose + 2.0 * tol.hover_offset * HOVER
    if phase is TaskPhase.GRASP_PREP:
        return ctx.workpiece_pose + tol.hover_offset * HOVER
    if phase is TaskPhase.GRASP:
        return ctx.workpiece_pose
    if phase is TaskPhase.LIFT:
        return ctx.workpiece_pose + tol.lift_offset * HOVER
    if phase is TaskPhase.TRANSPORT:
        return ctx.target_box_pose + tol.lift_offset * HOVER
    if phase is TaskPhase.PLACE_PREP:
        return ctx.target_box_pose + tol.hover_offset * HOVER
    return ctx.target_box_pose  # RELEASE


def ending_pose(phase: TaskPhase, ctx: TaskContext, arm: ArmParams,
                tol: GuardTolerances | None = None) -> np.ndarray:
    """Joint goal for a phase.  Raises UnreachableTargetError when the
    phase target is outside the workspace."""
    tol = tol or GuardTolerances()
    target = phase_target_point(phase, ctx, tol)
    if target is None:
        return ctx.neutral_theta.copy()
    return inverse_kinematics_2link(arm, target, ctx.elbow_sign)


def advance(phase: TaskPhase, ctx: TaskContext, state: ArmState, arm: ArmParams,
            tol: GuardTolerances, now: float):
    """One guard evaluation.  Returns (phase', ctx', [PhaseEvent])."""
    events = []
    ctx = ctx.copy()
    try:
        goal_theta = ending_pose(phase, ctx, arm, tol)
    except UnreachableTargetError as exc:
        ctx.phase_entry_time = now
        ctx.carrying = False
        events.append(PhaseEvent(now, "abort", phase, TaskPhase.IDLE, str(exc)))
        return TaskPhase.IDLE, ctx, events
    end_now = forward_kinematics(arm, state.theta)[-1]
    end_goal = forward_kinematics(arm, goal_theta)[-1]
    at_goal = float(np.linalg.norm(end_now - end_goal)) <= tol.position
    at_rest = float(np.max(np.abs(state.theta_dot))) <= tol.speed
    if not (at_goal and at_rest):
        return phase, ctx, events
    if phase in (TaskPhase.GRASP, TaskPhase.RELEASE):
        if now - ctx.phase_entry_time < tol.dwell:
            return phase, ctx, events
    nxt = next_phase(phase)
    if phase is TaskPhase.GRASP:
        ctx.carrying = True
    elif phase is TaskPhase.RELEASE:
        ctx.carrying = False
    ctx.phase_entry_time = now
    events.append(PhaseEvent(now, "transition", phase, nxt, "goal reached"))
    return nxt, ctx, events


def effective_arm(arm: ArmParams, ctx: TaskContext) -> ArmParams:
    """Arm with the carried workpiece wrapped into the last-link capsule."""
    if not ctx.carrying:
        return arm
    radius = arm.capsule_radius.copy()
    radius[-1] += ctx.workpiece_radius
    return ArmParams(arm.link_lengths, arm.base_position, arm.joint_lower,
                     arm.joint_upper, arm.max_accel, radius)

"""Planar robot-arm safe-interaction engine.

A long-term trajectory optimizer based on sequential convex feasible sets,
a short-term safety controller built on a safety-index half-space
projection, an adaptive obstacle predictor, and a deterministic simulator
wiring them together at two rates.
"""

from .arm import (ArmParams, ArmState, ControlInput, UnreachableTargetError,
                  forward_kinematics, inverse_kinematics_2link, step_dynamics)
from .safety import SafetyIndexParams, filter_control, safe_halfspace, safety_index
from .planner import PlannerConfig, Trajectory, cfs_solve, make_reference
from .human import ObstacleEstimate, PredictedPath, ReactiveModel, rls_update
from .fsm import TaskContext, TaskPhase
from .executor import ExecutorConfig, ParallelExecutor
from .sim import RunMetrics, Scenario, Simulator, load_scenario, run_scenario

__version__ = "0.1.0"

__all__ = [
    "ArmParams", "ArmState", "ControlInput", "UnreachableTargetError",
    "forward_kinematics", "inverse_kinematics_2link", "step_dynamics",
    "SafetyIndexParams", "filter_control", "safe_halfspace", "safety_index",
    "PlannerConfig", "Trajectory", "cfs_solve", "make_reference",
    "ObstacleEstimate", "PredictedPath", "ReactiveModel", "rls_update",
    "TaskContext", "TaskPhase",
    "ExecutorConfig", "ParallelExecutor",
    "RunMetrics", "Scenario", "Simulator", "load_scenario", "run_scenario",
    "__version__",
]

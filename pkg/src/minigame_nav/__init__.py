"""Deadlock-free decentralised navigation for social mini-games.

MPC with discrete control barrier functions keeps agents safe; a liveness
test on relative position and velocity detects approaching deadlocks, and a
minimal speed perturbation (or a liveness constraint inside the MPC) resolves
them, with a truthful auction breaking ties.
"""
from .auction import AuctionConfig, PriorityOrdering, allocate, payment, verify_truthfulness
from .barriers import BarrierKind, BarrierSpec, CbfParams, RobustParams, cbf_feasible, rcbf_feasible
from .dynamics import AgentState, ControlInput, IntegratorConfig, ModelKind, RobotModel, step_discrete
from .liveness import (LivenessConfig, LivenessSet, apply_min_invasive_perturbation,
                       detect_deadlock_risk, liveness_value, project_to_liveness,
                       required_slowdown_factor)
from .mpc import MpcConfig, OptimalPlan, receding_horizon_step, solve
from .scenarios import BUILDERS, AgentSpec, ScenarioError, ScenarioSpec, doorway, hallway, intersection
from .simulator import MetricsReport, SimConfig, Strategy, TrajectoryLog, compute_metrics, run

__version__ = "0.1.0"

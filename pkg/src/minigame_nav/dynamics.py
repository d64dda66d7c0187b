"""Robot state containers, unicycle dynamics and RK4 / Euler integration.

Two models are supported:

* ``single_integrator_unicycle``: state ``(x, y, theta)``, control ``(v, omega)``.
* ``double_integrator_diffdrive``: state ``(x, y, theta, v, omega)``, control
  ``(u1, u2)`` = (thrust [N], torque [N m]).

The batched helpers (:func:`rhs_batch`, :func:`integrate_batch`) work on
``(N, n)`` arrays and are what the MPC rollouts use; the scalar API wraps them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np


class ModelKind(str, Enum):
    SINGLE = "single_integrator_unicycle"
    DOUBLE = "double_integrator_diffdrive"


class Scheme(str, Enum):
    RK4 = "rk4"
    EULER = "euler"


def wrap_angle(theta):
    """Wrap angle(s) to [-pi, pi)."""
    return np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class AgentState:
    position: tuple[float, float]
    heading: float = 0.0
    linear_speed: float = 0.0
    angular_speed: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        pos = tuple(float(c) for c in self.position)
        if len(pos) != 2:
            raise ValueError("position must be a 2-vector")
        object.__setattr__(self, "position", pos)
        vals = (*pos, self.heading, self.linear_speed, self.angular_speed, self.time)
        if not all(math.isfinite(float(x)) for x in vals):
            raise ValueError(f"non-finite agent state: {vals}")
        object.__setattr__(self, "heading", float(wrap_angle(self.heading)))
        object.__setattr__(self, "linear_speed", float(self.linear_speed))
        object.__setattr__(self, "angular_speed", float(self.angular_speed))
        object.__setattr__(self, "time", float(self.time))

    @property
    def p(self) -> np.ndarray:
        return np.array(self.position)

    @property
    def velocity(self) -> np.ndarray:
        """Planar velocity vector v (cos theta, sin theta)."""
        return self.linear_speed * np.array([math.cos(self.heading), math.sin(self.heading)])


@dataclass(frozen=True)
class ControlInput:
    u1: float
    u2: float

    def __post_init__(self):
        if not (math.isfinite(self.u1) and math.isfinite(self.u2)):
            raise ValueError(f"non-finite control ({self.u1}, {self.u2})")

    def as_array(self) -> np.ndarray:
        return np.array([self.u1, self.u2], dtype=float)


@dataclass(frozen=True)
class RobotModel:
    kind: ModelKind = ModelKind.SINGLE
    mass: float = 1.0
    inertia: float = 0.1
    footprint_radius: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if not self.footprint_radius > 0:
            raise ValueError("footprint_radius must be > 0")
        if self.kind is ModelKind.DOUBLE and not (self.mass > 0 and self.inertia > 0):
            raise ValueError("double-integrator model needs mass > 0 and inertia > 0")

    @property
    def state_dim(self) -> int:
        return 3 if self.kind is ModelKind.SINGLE else 5

    @property
    def is_double(self) -> bool:
        return self.kind is ModelKind.DOUBLE


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.1
    scheme: Scheme = Scheme.RK4

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not self.dt > 0:
            raise ValueError("dt must be > 0")


def state_to_array(model: RobotModel, state: AgentState) -> np.ndarray:
    x, y = state.position
    if model.is_double:
        return np.array([x, y, state.heading, state.linear_speed, state.angular_speed])
    return np.array([x, y, state.heading])


def array_to_state(model: RobotModel, arr, time: float, u=None) -> AgentState:
    """Inverse of :func:`state_to_array`.

    For the single integrator the speeds are not part of the state, so the
    control ``u`` that produced ``arr`` is stored as the current velocity.
    """
    arr = np.asarray(arr, dtype=float)
    if model.is_double:
        return AgentState((arr[0], arr[1]), arr[2], arr[3], arr[4], time)
    v, w = (0.0, 0.0) if u is None else (float(u[0]), float(u[1]))
    return AgentState((arr[0], arr[1]), arr[2], v, w, time)


def rhs_batch(model: RobotModel, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """f_c(x) + g_c(x) u for a batch of states ``(N, n)`` and controls ``(N, 2)``."""
    th = x[:, 2]
    out = np.empty(x.shape)
    if model.is_double:
        v = x[:, 3]
        out[:, 2] = x[:, 4]
        out[:, 3] = u[:, 0] / model.mass
        out[:, 4] = u[:, 1] / model.inertia
    else:
        v = u[:, 0]
        out[:, 2] = u[:, 1]
    out[:, 0] = v * np.cos(th)
    out[:, 1] = v * np.sin(th)
    return out


def integrate_batch(model: RobotModel, x: np.ndarray, u: np.ndarray, dt: float,
                    scheme: Scheme = Scheme.RK4) -> np.ndarray:
    """One zero-order-hold step of length dt; heading is wrapped afterwards."""
    if scheme is Scheme.EULER:
        out = x + dt * rhs_batch(model, x, u)
    else:
        k1 = rhs_batch(model, x, u)
        k2 = rhs_batch(model, x + 0.5 * dt * k1, u)
        k3 = rhs_batch(model, x + 0.5 * dt * k2, u)
        k4 = rhs_batch(model, x + dt * k3, u)
        out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[:, 2] = wrap_angle(out[:, 2])
    return out


def _check_control(u: ControlInput | np.ndarray | tuple) -> np.ndarray:
    arr = u.as_array() if isinstance(u, ControlInput) else np.asarray(u, dtype=float).reshape(2)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite control {arr}")
    return arr


def continuous_rhs(model: RobotModel, state: AgentState, u) -> np.ndarray:
    """State derivative of the continuous-time model.

    Returns ``(xdot, ydot, thetadot)`` for the single integrator and
    ``(xdot, ydot, thetadot, vdot, omegadot)`` for the double integrator.
    """
    uu = _check_control(u)
    return rhs_batch(model, state_to_array(model, state)[None, :], uu[None, :])[0]


def step_discrete(model: RobotModel, cfg: IntegratorConfig, state: AgentState, u) -> AgentState:
    """Advance ``state`` by ``cfg.dt`` under a constant control ``u``."""
    uu = _check_control(u)
    x = state_to_array(model, state)[None, :]
    nxt = integrate_batch(model, x, uu[None, :], cfg.dt, cfg.scheme)[0]
    return array_to_state(model, nxt, state.time + cfg.dt, uu)


def with_time(state: AgentState, t: float) -> AgentState:
    return replace(state, time=t)

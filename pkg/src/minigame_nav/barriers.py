"""Barrier functions and the discrete CBF / robust-CBF feasibility tests.

The barrier for both obstacle kinds is ``h = ||p - c||^2 - r^2``: positive in
the safe set, zero on its boundary and negative inside the obstacle.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

FEAS_TOL = 1e-9


class BarrierKind(str, Enum):
    STATIC_CIRCLE = "static_circle"
    PAIRWISE_AGENT = "pairwise_agent"


@dataclass(frozen=True)
class BarrierSpec:
    kind: BarrierKind
    radius: float
    center: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BarrierKind(self.kind))
        if not self.radius > 0:
            raise ValueError(f"barrier radius must be > 0, got {self.radius}")
        if self.kind is BarrierKind.STATIC_CIRCLE:
            if self.center is None:
                raise ValueError("static_circle barrier needs a center")
            object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @classmethod
    def circle(cls, center, radius) -> "BarrierSpec":
        return cls(BarrierKind.STATIC_CIRCLE, float(radius), tuple(center))

    @classmethod
    def pairwise(cls, radius) -> "BarrierSpec":
        return cls(BarrierKind.PAIRWISE_AGENT, float(radius))


@dataclass(frozen=True)
class CbfParams:
    gamma: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class RobustParams:
    input_bound: float = 0.0

    def __post_init__(self):
        if self.input_bound < 0:
            raise ValueError("input_bound must be >= 0")


def eval_barrier(spec: BarrierSpec, own_position, other_position=None) -> float:
    """h = ||p - c||^2 - r^2 with c the obstacle centre or the other agent."""
    p = np.asarray(own_position, dtype=float)
    if spec.kind is BarrierKind.PAIRWISE_AGENT:
        if other_position is None:
            raise ValueError("pairwise barrier needs the other agent's position")
        c = np.asarray(other_position, dtype=float)
    else:
        c = np.asarray(spec.center, dtype=float)
    d = p - c
    return float(d @ d - spec.radius ** 2)


def barrier_values(points: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Vectorised barrier: ``points (..., 2)`` against ``M`` circles -> ``(..., M)``."""
    d = points[..., None, :] - centers
    return np.einsum("...mk,...mk->...m", d, d) - radii ** 2


def cbf_feasible(spec: BarrierSpec | None, params: CbfParams, h_now: float, h_next: float,
                 tol: float = FEAS_TOL) -> bool:
    """Discrete CBF condition h_next - h_now >= -gamma h_now (up to ``tol``).

    ``spec`` is accepted for interface symmetry; the test only needs the two values.
    """
    return bool((h_next - h_now) + tol >= -params.gamma * h_now)


def rcbf_feasible(params: CbfParams, robust: RobustParams | None, h_now: float, h_next: float,
                  rho: float, tol: float = FEAS_TOL) -> bool:
    """Robust condition (h_next - h_now) - rho >= -gamma h_now."""
    return bool((h_next - h_now) - rho + tol >= -params.gamma * h_now)


def perturbation_grid(bound: float, n_grid: int = 5, dim: int = 2) -> np.ndarray:
    """Lattice over the box [-bound, bound]^dim, corners included."""
    axis = np.linspace(-bound, bound, n_grid)
    return np.array(list(itertools.product(axis, repeat=dim)))


def robust_margin(params: RobustParams, h_at: Callable[[np.ndarray], float], state, u,
                  successor: Callable | None = None, n_grid: int = 5) -> float:
    """Worst-case change of the successor barrier under a bounded input error.

    ``rho = max_{|du|_inf <= p} |h(succ(u + du)) - h(succ(u))|``.

    ``successor(state, u) -> next state`` and ``h_at(next state) -> float`` are
    callables so the routine works for any dynamics; when ``successor`` is
    omitted ``state`` and ``u`` are treated as vectors and the successor is
    ``state + u`` (a unit-step single integrator). The box is scanned on an
    ``n_grid`` lattice per axis, which contains every corner, the axis extremes
    and the centre; for barriers quadratic in position these include the
    maximiser.
    """
    p = float(params.input_bound)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if p == 0.0:
        return 0.0
    if successor is None:
        def successor(s, uu):
            return np.atleast_1d(np.asarray(s, dtype=float)) + uu
    h0 = h_at(successor(state, u))
    rho = 0.0
    for du in perturbation_grid(p, max(2, n_grid), u.size):
        rho = max(rho, abs(h_at(successor(state, u + du)) - h0))
    return float(rho)

"""Receding-horizon controller with discrete CBF constraints.

The optimal control problem is solved by direct single shooting: a batch of
control sequences (scrambled Sobol samples inside the actuator box plus a
few structured guesses) is rolled out through the discrete dynamics, ranked,
and the best one is polished by coordinate descent. Candidates are ranked
lexicographically by

1. hard violation (CBF rows for every barrier, state bounds), measured
   without slack so that exactly feasible candidates always win,
2. soft violation of the optional liveness row,
3. cost.

Other agents are frozen at their observed positions and treated as circular
obstacles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import qmc

from .barriers import BarrierKind, BarrierSpec, barrier_values, perturbation_grid
from .dynamics import (AgentState, ControlInput, IntegratorConfig, RobotModel, Scheme,
                       integrate_batch, state_to_array, step_discrete, wrap_angle)

MPC_TOL = 1e-6


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 3
    dt: float = 0.1
    state_cost_diag: tuple = (11.0, 11.0, 0.005)
    control_cost_diag: tuple = (1.0, 0.5)
    terminal_cost_scale: float = 10.0
    v_limit: float = 0.3
    omega_limit: float = 3.8
    gamma: float = 0.2
    candidate_budget: int = 512
    refine_iterations: int = 20
    # double-integrator actuator limits, as accelerations (force = m a)
    accel_limit: float = 2.0
    alpha_limit: float = 20.0
    scheme: Scheme = Scheme.RK4
    # barriers whose surface is farther than this cannot bind within the horizon
    prune_distance: float = 0.7

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if min(self.state_cost_diag) < 0 or min(self.control_cost_diag) < 0:
            raise ValueError("cost weights must be >= 0")
        if self.terminal_cost_scale < 0:
            raise ValueError("terminal_cost_scale must be >= 0")
        if not (self.v_limit > 0 and self.omega_limit > 0 and self.dt > 0):
            raise ValueError("limits and dt must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(self.dt, self.scheme)


@dataclass
class LivenessConstraint:
    """Liveness rows ``A v >= 0`` on the joint speed vector.

    ``speeds`` holds every agent's speed; entry ``own_index`` is replaced by
    the predicted speed of the planning agent, the others stay frozen.
    """
    rows: np.ndarray
    speeds: np.ndarray
    own_index: int = 0

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        self.speeds = np.asarray(self.speeds, dtype=float)

    def values(self, v_own: np.ndarray) -> np.ndarray:
        """Row values for an array of own speeds ``(...)`` -> ``(..., m)``."""
        fixed = self.rows @ self.speeds - self.rows[:, self.own_index] * self.speeds[self.own_index]
        return fixed + v_own[..., None] * self.rows[:, self.own_index]


@dataclass
class OptimalPlan:
    controls: list
    predicted_states: list
    cost: float
    feasible: bool
    safety_violation: float = 0.0
    liveness_violation: float = 0.0
    control_array: np.ndarray = field(default=None, repr=False)

    @property
    def first(self) -> ControlInput:
        return self.controls[0]


def control_box(model: RobotModel, cfg: MpcConfig):
    if model.is_double:
        lo = np.array([-cfg.accel_limit * model.mass, -cfg.alpha_limit * model.inertia])
    else:
        lo = np.array([0.0, -cfg.omega_limit])
    hi = np.array([cfg.v_limit, cfg.omega_limit]) if not model.is_double else -lo
    return lo, hi


@lru_cache(maxsize=64)
def _sobol_unit(dim: int, n: int, seed: int) -> np.ndarray:
    s = qmc.Sobol(d=dim, scramble=True, seed=seed)
    m = max(1, int(math.ceil(math.log2(max(n, 2)))))
    pts = s.random_base2(m)[:n]
    pts.setflags(write=False)
    return pts


def _barrier_arrays(state: AgentState, frozen_others, static_obstacles, cfg: MpcConfig):
    centers, radii = [], []
    for pos, r in frozen_others:
        centers.append(pos)
        radii.append(r)
    for spec in static_obstacles:
        if spec.kind is not BarrierKind.STATIC_CIRCLE:
            raise ValueError("static obstacles must be static_circle barriers")
        centers.append(spec.center)
        radii.append(spec.radius)
    if not centers:
        return np.zeros((0, 2)), np.zeros(0)
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    r = np.asarray(radii, dtype=float)
    gap = np.hypot(*(c - state.p).T) - r
    keep = gap <= cfg.prune_distance
    return c[keep], r[keep]


class _Problem:
    """Vectorised evaluation of candidate control sequences."""

    def __init__(self, model, state, goal, centers, radii, liveness, cfg: MpcConfig,
                 robust_bound: float = 0.0):
        self.model, self.cfg = model, cfg
        self.robust_bound = float(robust_bound) if not model.is_double else 0.0
        self.x0 = state_to_array(model, state)
        self.goal = np.asarray(goal, dtype=float)
        self.centers, self.radii = centers, radii
        self.liveness = liveness
        self.Q = np.asarray(cfg.state_cost_diag, dtype=float)
        self.R = np.asarray(cfg.control_cost_diag, dtype=float)
        self.lo, self.hi = control_box(model, cfg)

    def rollout(self, U: np.ndarray) -> np.ndarray:
        n, T = U.shape[0], self.cfg.horizon
        X = np.empty((n, T + 1, self.x0.size))
        X[:, 0] = self.x0
        for t in range(T):
            X[:, t + 1] = integrate_batch(self.model, X[:, t], U[:, t], self.cfg.dt, self.cfg.scheme)
        return X

    def state_cost(self, X: np.ndarray) -> np.ndarray:
        d = X[..., :2] - self.goal
        dist = np.hypot(d[..., 0], d[..., 1])
        bearing = np.arctan2(-d[..., 1], -d[..., 0])
        herr = np.where(dist > 1e-9, wrap_angle(X[..., 2] - bearing), 0.0)
        return self.Q[0] * d[..., 0] ** 2 + self.Q[1] * d[..., 1] ** 2 + self.Q[2] * herr ** 2

    def first_step_rho(self, U0: np.ndarray, h1: np.ndarray) -> np.ndarray:
        """Robust margin of every barrier for the first control of each candidate."""
        D = perturbation_grid(self.robust_bound)
        n, m = U0.shape[0], D.shape[0]
        x = np.repeat(self.x0[None], n * m, axis=0)
        Xp = integrate_batch(self.model, x, (U0[:, None, :] + D).reshape(-1, 2), self.cfg.dt,
                             self.cfg.scheme).reshape(n, m, -1)
        hp = barrier_values(Xp[..., :2], self.centers, self.radii)
        return np.abs(hp - h1[:, None, :]).max(axis=1)

    def evaluate(self, U: np.ndarray):
        """Returns (hard violation, soft violation, cost, rollouts)."""
        cfg = self.cfg
        X = self.rollout(U)
        sc = self.state_cost(X)
        cost = sc[:, :-1].sum(axis=1) + cfg.terminal_cost_scale * sc[:, -1]
        cost = cost + np.einsum("ntk,k->n", U ** 2, self.R)
        hard = np.zeros(U.shape[0])
        if self.radii.size:
            d = X[:, :, None, :2] - self.centers
            h = np.einsum("ntmk,ntmk->ntm", d, d) - self.radii ** 2
            margin = np.zeros_like(h[:, :-1])
            if self.robust_bound > 0:
                margin[:, 0] = self.first_step_rho(U[:, 0], h[:, 1])
            hard += np.maximum(0.0, (1 - cfg.gamma) * h[:, :-1] - h[:, 1:] + margin).sum(axis=(1, 2))
        if self.model.is_double:
            v, w = X[:, 1:, 3], X[:, 1:, 4]
            hard += (np.maximum(0.0, -v) + np.maximum(0.0, v - cfg.v_limit)
                     + np.maximum(0.0, np.abs(w) - cfg.omega_limit)).sum(axis=1)
        soft = np.zeros(U.shape[0])
        if self.liveness is not None:
            v_own = X[..., 3] if self.model.is_double else np.concatenate(
                [np.full((U.shape[0], 1), np.nan), U[..., 0]], axis=1)
            hv = self.liveness.values(v_own)
            if self.model.is_double:
                soft = np.maximum(0.0, (1 - cfg.gamma) * hv[:, :-1] - hv[:, 1:]).sum(axis=(1, 2))
            else:
                soft = np.maximum(0.0, -hv[:, 1:]).sum(axis=(1, 2))
        return hard, soft, cost, X


def _rank_key(hard, soft, cost):
    return np.lexsort((cost, soft, hard))


def _better(a, b) -> bool:
    """Lexicographic comparison of (hard, soft, cost) triples."""
    return (a[0], a[1], a[2]) < (b[0], b[1], b[2])


def structured_candidates(model: RobotModel, state: AgentState, goal, cfg: MpcConfig,
                          warm_start=None) -> np.ndarray:
    """Zero sequence, go-to-goal guesses, braking (double integrator) and warm start."""
    T = cfg.horizon
    lo, hi = control_box(model, cfg)
    out = [np.zeros((T, 2))]
    d = np.asarray(goal, dtype=float) - state.p
    herr = float(wrap_angle(math.atan2(d[1], d[0]) - state.heading)) if np.hypot(*d) > 1e-9 else 0.0
    if model.is_double:
        brake = -state.linear_speed / cfg.dt * model.mass
        spin = -state.angular_speed / cfg.dt * model.inertia
        U = np.zeros((T, 2))
        U[0] = [brake, spin]
        out.append(np.clip(U, lo, hi))
        out.append(np.clip(np.tile([brake, spin], (T, 1)), lo, hi))
        for a in (hi[0], 0.0):
            wdes = np.clip(herr / (T * cfg.dt), -cfg.omega_limit, cfg.omega_limit)
            out.append(np.clip(np.tile([a, (wdes - state.angular_speed) / cfg.dt * model.inertia],
                                       (T, 1)), lo, hi))
    else:
        w = np.clip(herr / cfg.dt, lo[1], hi[1])
        for v in (hi[0], 0.5 * hi[0], 0.0):
            out.append(np.tile([v, w], (T, 1)))
        U = np.tile([hi[0], 0.0], (T, 1))
        U[0, 1] = w
        out.append(U)
        # constant arcs
        for frac_w in (-1.0, -0.5, -0.25, 0.25, 0.5, 1.0):
            for frac_v in (1.0, 0.5, 0.25):
                out.append(np.tile([frac_v * hi[0], frac_w * hi[1]], (T, 1)))
        # rotate-first primitives: spin in place for one step, then drive
        for w0 in (hi[1], 0.5 * hi[1], 0.5 * lo[1], lo[1]):
            for v_level in (hi[0], 0.5 * hi[0]):
                for w_rest in (0.0, w0):
                    U = np.tile([v_level, w_rest], (T, 1))
                    U[0] = [0.0, w0]
                    out.append(U)
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float).reshape(-1, 2)
        if ws.shape[0] >= 1:
            shifted = np.vstack([ws[1:], ws[-1:]])[:T]
            if shifted.shape[0] < T:
                shifted = np.vstack([shifted, np.repeat(shifted[-1:], T - shifted.shape[0], 0)])
            out.append(np.clip(shifted, lo, hi))
    return np.clip(np.stack(out), lo, hi)


def solve(state: AgentState, goal, frozen_others=(), static_obstacles=(), liveness_constraint=None,
          cfg: MpcConfig | None = None, model: RobotModel | None = None, seed: int = 0,
          warm_start=None, candidates=None, robust_bound: float = 0.0) -> OptimalPlan:
    """Best-response horizon problem for one agent.

    ``frozen_others`` is a list of ``(position, margin r)`` pairs. When
    ``candidates`` (shape ``(n, T, 2)``) is given, exactly that set is ranked
    without sampling or refinement, which makes the solver checkable against
    brute-force enumeration. A positive ``robust_bound`` tightens the first
    step's CBF rows by the robust margin of a bounded input error
    (single integrator only).
    """
    cfg = cfg or MpcConfig()
    model = model or RobotModel()
    goal = np.asarray(goal, dtype=float)
    if not np.all(np.isfinite(goal)):
        raise ValueError("goal must be finite")
    centers, radii = _barrier_arrays(state, frozen_others, static_obstacles, cfg)
    prob = _Problem(model, state, goal, centers, radii, liveness_constraint, cfg, robust_bound)
    T = cfg.horizon
    lo, hi = prob.lo, prob.hi

    if candidates is not None:
        U = np.asarray(candidates, dtype=float).reshape(-1, T, 2)
        refine = 0
    else:
        unit = _sobol_unit(2 * T, cfg.candidate_budget, int(seed) % (2 ** 31))
        samples = lo + unit.reshape(-1, T, 2) * (hi - lo)
        if not model.is_double:
            # a quarter of the samples rotate in place first, so that escapes
            # requiring a turn before any motion are represented
            samples[::4, 0, 0] = 0.0
        U = np.concatenate([structured_candidates(model, state, goal, cfg, warm_start), samples])
        refine = cfg.refine_iterations

    hard, soft, cost, _ = prob.evaluate(U)
    i = _rank_key(hard, soft, cost)[0]
    best_u, best = U[i].copy(), (hard[i], soft[i], cost[i])

    step = 0.25 * (hi - lo)
    n_coord = 2 * T
    for _ in range(refine):
        trial = np.repeat(best_u[None], 2 * n_coord, axis=0)
        for c in range(n_coord):
            t, k = divmod(c, 2)
            trial[2 * c, t, k] += step[k]
            trial[2 * c + 1, t, k] -= step[k]
        trial = np.clip(trial, lo, hi)
        h2, s2, c2, _ = prob.evaluate(trial)
        j = _rank_key(h2, s2, c2)[0]
        if _better((h2[j], s2[j], c2[j]), best):
            best_u, best = trial[j].copy(), (h2[j], s2[j], c2[j])
        else:
            step = 0.5 * step

    integ = cfg.integrator
    states = [state]
    for t in range(T):
        states.append(step_discrete(model, integ, states[-1], best_u[t]))
    controls = [ControlInput(float(a), float(b)) for a, b in best_u]
    return OptimalPlan(controls, states, float(best[2]), bool(best[0] <= MPC_TOL),
                       float(best[0]), float(best[1]), best_u)


def receding_horizon_step(state: AgentState, goal, frozen_others=(), static_obstacles=(),
                          cfg: MpcConfig | None = None, model: RobotModel | None = None,
                          liveness_constraint=None, seed: int = 0, warm_start=None,
                          robust_bound: float = 0.0):
    """First control of the optimal plan plus the plan itself.

    An infeasible plan is replaced by a braking control (zero for the
    single integrator); the returned ``feasible`` flag lets callers react.
    With ``robust_bound > 0`` the least-violating plan is kept instead: a
    stopped agent under input noise drifts, whereas the best plan still pushes
    back towards the safe set.
    """
    model = model or RobotModel()
    cfg = cfg or MpcConfig()
    plan = solve(state, goal, frozen_others, static_obstacles, liveness_constraint, cfg, model,
                 seed, warm_start, robust_bound=robust_bound)
    if plan.feasible or robust_bound > 0:
        return plan.first, plan
    if model.is_double:
        lo, hi = control_box(model, cfg)
        u = np.clip([-state.linear_speed / cfg.dt * model.mass,
                     -state.angular_speed / cfg.dt * model.inertia], lo, hi)
        return ControlInput(float(u[0]), float(u[1])), plan
    return ControlInput(0.0, 0.0), plan


def pairwise_margin(model_i: RobotModel, model_j: RobotModel, clearance: float = 0.05) -> float:
    return model_i.footprint_radius + model_j.footprint_radius + clearance


def inflate(spec: BarrierSpec, by: float) -> BarrierSpec:
    """Circle grown by ``by`` (agent footprint), so the agent centre is tested."""
    return BarrierSpec.circle(spec.center, spec.radius + by)

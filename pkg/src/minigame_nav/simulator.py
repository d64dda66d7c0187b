"""Asynchronous decentralised control loop, adjudication and logging.

Each tick the agents act in list order. Agent i plans against a snapshot in
which agents 0..i-1 have already moved this tick and i..k-1 still show their
previous-tick state. After the MPC, the selected deadlock strategy may
modify the control:

* ``mpc_cbf_only``: nothing.
* ``liveness_perturbation``: speed of the agent is projected onto the
  liveness set (single integrator); heading control untouched.
* ``liveness_cbf_constraint``: the MPC is re-solved with a liveness row
  (double integrator, where speed is a state).
* ``random_perturbation``: uniform noise is added to the commanded speed.

Both liveness strategies dispatch on the agent's dynamics, so either name
works for either model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .auction import AuctionConfig, allocate
from .barriers import barrier_values, perturbation_grid
from .dynamics import AgentState, ControlInput, integrate_batch, state_to_array, step_discrete
from .liveness import (LivenessConfig, LivenessSet, choose_by_priority, liveness_value,
                       project_to_liveness)
from .mpc import LivenessConstraint, MpcConfig, control_box, receding_horizon_step, solve
from .scenarios import PAIR_CLEARANCE, ScenarioSpec, validate

COLUMNS = ("time", "agent_id", "x", "y", "theta", "v", "omega", "u1", "u2",
           "min_liveness", "min_barrier")


class Strategy(str, Enum):
    MPC_CBF_ONLY = "mpc_cbf_only"
    LIVENESS_PERTURBATION = "liveness_perturbation"
    LIVENESS_CBF_CONSTRAINT = "liveness_cbf_constraint"
    RANDOM_PERTURBATION = "random_perturbation"

    @property
    def is_liveness(self) -> bool:
        return self in (Strategy.LIVENESS_PERTURBATION, Strategy.LIVENESS_CBF_CONSTRAINT)


@dataclass(frozen=True)
class SimConfig:
    strategy: Strategy = Strategy.MPC_CBF_ONLY
    seed: int = 0
    total_time: float = 30.0
    dt: float = 0.1
    deadlock_window: float = 2.0
    deadlock_speed_fraction: float = 0.05
    goal_tolerance: float = 0.1
    input_noise: float = 0.0
    robust_bound: float = 0.0
    random_scale: float = 0.5
    stop_when_stalled: bool = True
    mpc: MpcConfig | None = None
    liveness: LivenessConfig = field(default_factory=LivenessConfig)
    auction: AuctionConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.deadlock_window > self.dt:
            raise ValueError("deadlock_window must exceed dt")
        if self.input_noise < 0 or self.robust_bound < 0:
            raise ValueError("noise bounds must be >= 0")
        if self.mpc is None:
            object.__setattr__(self, "mpc", MpcConfig(dt=self.dt))
        elif abs(self.mpc.dt - self.dt) > 1e-12:
            raise ValueError("MpcConfig.dt must equal SimConfig.dt")

    @property
    def speed_threshold(self) -> float:
        return self.deadlock_speed_fraction * self.mpc.v_limit


@dataclass
class TrajectoryLog:
    """Rows ordered by tick then agent; columns as in :data:`COLUMNS`."""
    n_agents: int
    dt: float
    rows: np.ndarray
    decisions: list = field(default_factory=list)
    collisions: list = field(default_factory=list)
    terminated: str = ""

    @property
    def times(self) -> np.ndarray:
        return self.rows[:: self.n_agents, 0]

    def column(self, name: str) -> np.ndarray:
        """``(ticks, agents)`` array of one column."""
        return self.rows[:, COLUMNS.index(name)].reshape(-1, self.n_agents)

    def agent(self, i: int) -> np.ndarray:
        return self.rows[i:: self.n_agents]


@dataclass
class MetricsReport:
    success: list
    collision_rate: float
    deadlock_rate: float
    avg_delta_v: list
    path_deviation: list
    makespan_ratio: float
    specific_flow_rate: float
    stop_time: list
    arrival_times: list = field(default_factory=list)
    deadlocked: list = field(default_factory=list)
    flow_rate_defined: bool = True

    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, float) and not math.isfinite(x):
                return None
            return x
        d = {k: v for k, v in self.__dict__.items()}
        for k, v in d.items():
            d[k] = [clean(x) for x in v] if isinstance(v, list) else clean(v)
        d["mean_avg_delta_v"] = float(np.mean(self.avg_delta_v))
        d["mean_path_deviation"] = float(np.mean(self.path_deviation))
        d["mean_stop_time"] = float(np.mean(self.stop_time))
        return d


# --------------------------------------------------------------------------
# Adjudication helpers
# --------------------------------------------------------------------------

def detect_collision(positions, footprints, wall_centers=None, wall_radii=None):
    """Pairs ``(i, j)`` of overlapping discs and ``(i, "wall")`` wall contacts.

    Touching (distance equal to the radius sum) is not a collision.
    """
    P = np.asarray(positions, dtype=float).reshape(-1, 2)
    r = np.asarray(footprints, dtype=float)
    out = []
    for i in range(len(P)):
        for j in range(i + 1, len(P)):
            if np.hypot(*(P[i] - P[j])) < r[i] + r[j]:
                out.append((i, j))
        if wall_centers is not None and len(wall_centers):
            d = np.hypot(*(np.asarray(wall_centers) - P[i]).T)
            if np.any(d < np.asarray(wall_radii) + r[i]):
                out.append((i, "wall"))
    return out


def _below_mask(speeds, positions, goal, threshold, tol):
    off_goal = np.hypot(*(positions - np.asarray(goal)).T) > tol
    return (np.abs(speeds) < threshold) & off_goal


def detect_deadlock(speeds, positions, goal, cfg: SimConfig, dt: float | None = None,
                    anywhere: bool = False) -> bool:
    """Deadlock test on one agent's speed / position history.

    True iff the speed stayed below ``deadlock_speed_fraction * v_limit`` for
    the last ``deadlock_window`` seconds while off the goal region. With
    ``anywhere`` any such window in the history counts.
    """
    dt = dt or cfg.dt
    speeds = np.asarray(speeds, dtype=float)
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = int(round(cfg.deadlock_window / dt))
    if speeds.size < n:
        return False
    mask = _below_mask(speeds, positions, goal, cfg.speed_threshold, cfg.goal_tolerance)
    if not anywhere:
        return bool(np.all(mask[-n:]))
    run = 0
    for m in mask:
        run = run + 1 if m else 0
        if run >= n:
            return True
    return False


def random_perturbation(speeds, rng, v_limit: float, scale: float = 0.5) -> np.ndarray:
    """Add uniform noise in ``[-scale, scale] * v_limit`` and clamp to [0, v_limit].

    ``rng`` is a numpy Generator or an integer seed.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    v = np.atleast_1d(np.asarray(speeds, dtype=float))
    if scale == 0:
        return v.copy()
    noise = rng.uniform(-scale, scale, size=v.shape) * v_limit
    return np.clip(v + noise, 0.0, v_limit)


def _polyline_distance(points: np.ndarray, path: np.ndarray) -> np.ndarray:
    best = np.full(len(points), np.inf)
    for a, b in zip(path[:-1], path[1:]):
        ab = b - a
        L2 = float(ab @ ab)
        s = np.zeros(len(points)) if L2 == 0 else np.clip((points - a) @ ab / L2, 0, 1)
        proj = a + s[:, None] * ab
        best = np.minimum(best, np.hypot(*(points - proj).T))
    return best


def compute_metrics(log: TrajectoryLog, scenario: ScenarioSpec,
                    cfg: SimConfig | None = None) -> MetricsReport:
    cfg = cfg or SimConfig()
    n = log.n_agents
    t = log.times
    X, Y, V = log.column("x"), log.column("y"), log.column("v")
    collided = set()
    for _, i, j in log.collisions:
        collided.add(i)
        if j != "wall":
            collided.add(j)
    success, arrivals, dv, dev, stop, dead = [], [], [], [], [], []
    for i, a in enumerate(scenario.agents):
        P = np.stack([X[:, i], Y[:, i]], axis=1)
        at_goal = np.hypot(*(P - np.asarray(a.goal)).T) <= cfg.goal_tolerance
        k_arr = int(np.argmax(at_goal)) if at_goal.any() else None
        arrivals.append(float(t[k_arr]) if k_arr is not None else math.nan)
        end = (k_arr + 1) if k_arr is not None else len(t)
        v = V[:end, i]
        dv.append(float(np.mean(np.abs(np.diff(v)))) if v.size > 1 else 0.0)
        dev.append(float(np.mean(_polyline_distance(P[:end], scenario.preferred_paths[i]))))
        below = _below_mask(V[1:end, i], P[1:end], a.goal, cfg.speed_threshold, cfg.goal_tolerance)
        stop.append(float(below.sum() * log.dt))
        dead.append(detect_deadlock(V[1:, i], P[1:], a.goal, cfg, log.dt, anywhere=True))
        success.append(bool(k_arr is not None and i not in collided))
    ok = [arrivals[i] for i in range(n) if success[i]]
    makespan_ratio = (max(ok) / min(ok) if min(ok) > 0 else math.inf) if ok else math.nan
    width = scenario.flow_width
    defined = all(success) and width is not None and width > 0
    flow = n / (width * max(arrivals)) if defined else 0.0
    return MetricsReport(success, len(collided) / n, float(np.mean(dead)), dv, dev,
                         float(makespan_ratio), float(flow), stop, arrivals, dead, defined)


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------

class _World:
    """Static per-run data: inflated wall barriers and pairwise margins."""

    def __init__(self, scenario: ScenarioSpec):
        self.sc = scenario
        self.models = [a.model for a in scenario.agents]
        self.foot = np.array([m.footprint_radius for m in self.models])
        self.wc = scenario.wall_centers()
        self.wr = scenario.wall_radii()
        k = len(self.models)
        self.margin = self.foot[:, None] + self.foot[None, :] + PAIR_CLEARANCE
        self.margin[np.arange(k), np.arange(k)] = 0.0
        self.walls_for = [[] for _ in range(k)]
        from .barriers import BarrierSpec
        for i in range(k):
            self.walls_for[i] = [BarrierSpec.circle(c, r + self.foot[i])
                                 for c, r in zip(self.wc, self.wr)]

    def barrier_set(self, i: int, positions: np.ndarray):
        """Centres and radii of every barrier agent i must respect."""
        others = [j for j in range(len(positions)) if j != i]
        c = np.vstack([positions[others].reshape(-1, 2), self.wc.reshape(-1, 2)])
        r = np.concatenate([self.margin[i, others], self.wr + self.foot[i]])
        return c, r


def _cbf_slack(p_now, p_next, centers, radii, gamma, rho=None) -> float:
    """min over barriers of h_next - h_now + gamma h_now (- rho)."""
    if radii.size == 0:
        return math.inf
    h0 = barrier_values(np.asarray(p_now), centers, radii)
    h1 = barrier_values(np.asarray(p_next), centers, radii)
    s = h1 - h0 + gamma * h0
    if rho is not None:
        s = s - rho
    return float(s.min())


def _rho_single(model, dt, scheme, state, u, centers, radii, bound):
    """Robust margin per barrier for one single-integrator control."""
    D = perturbation_grid(bound)
    x = np.repeat(state_to_array(model, state)[None], len(D) + 1, axis=0)
    U = np.vstack([np.asarray(u)[None], np.asarray(u) + D])
    P = integrate_batch(model, x, U, dt, scheme)[:, :2]
    h = barrier_values(P, centers, radii)
    return np.abs(h[1:] - h[0]).max(axis=0)


class Simulation:
    def __init__(self, scenario: ScenarioSpec, cfg: SimConfig):
        self.sc = validate(scenario)
        self.cfg = cfg
        self.world = _World(scenario)
        self.rng_noise = np.random.default_rng([cfg.seed, 1])
        self.rng_random = np.random.default_rng([cfg.seed, 2])
        self.warm = [None] * len(scenario.agents)

    # -- control -----------------------------------------------------------
    def _sensed(self, i, snap):
        a = self.sc.agents[i]
        return [j for j in range(len(snap)) if j != i
                and math.dist(snap[i].position, snap[j].position) <= a.sensing_radius]

    def _risk_group(self, i, snap, sensed, vel_i):
        lc = self.cfg.liveness
        flagged = []
        for j in sensed:
            if liveness_value(snap[i].p, vel_i, snap[j].p, snap[j].velocity, lc) <= lc.ell_thresh:
                flagged.append(j)
        return flagged

    def _target_speeds(self, group, speeds):
        """Projection of the group's joint speed; ties settled by the auction."""
        lset = LivenessSet(len(group), self.cfg.liveness.zeta)
        proj, tie, cands = project_to_liveness(lset, np.maximum(speeds, 0.0),
                                               self.cfg.mpc.v_limit, return_candidates=True)
        ordering = None
        if tie:
            bids = [self.sc.agents[g].incentive for g in group]
            ordering = allocate(bids, self.cfg.auction)
            proj = choose_by_priority(cands, ordering.ranked())
        return lset, proj, tie, ordering

    def _guard_speed(self, i, snap, v_target, omega, v_fallback):
        """Largest admissible speed <= v_target passing the (robust) CBF test."""
        cfg, model = self.cfg, self.world.models[i]
        pos = np.array([s.position for s in snap])
        c, r = self.world.barrier_set(i, pos)
        grid = [v_target] + [v for v in (v_fallback, 0.75 * v_target, 0.5 * v_target,
                                         0.25 * v_target, 0.0) if v < v_target]
        for v in grid:
            u = np.array([v, omega])
            nxt = step_discrete(model, cfg.mpc.integrator, snap[i], u)
            rho = (_rho_single(model, cfg.dt, cfg.mpc.scheme, snap[i], u, c, r, cfg.robust_bound)
                   if cfg.robust_bound > 0 and r.size else None)
            if _cbf_slack(snap[i].p, nxt.p, c, r, cfg.mpc.gamma, rho) >= -1e-9:
                return v
        return 0.0

    def _control(self, i, snap, tick):
        cfg, sc = self.cfg, self.sc
        model, spec = self.world.models[i], sc.agents[i]
        sensed = self._sensed(i, snap)
        frozen = [(snap[j].position, self.world.margin[i, j]) for j in sensed]
        walls = self.world.walls_for[i]
        seed = cfg.seed
        u, plan = receding_horizon_step(snap[i], spec.goal, frozen, walls, cfg.mpc, model,
                                        seed=seed, warm_start=self.warm[i],
                                        robust_bound=cfg.robust_bound)
        info = {"feasible": plan.feasible, "flagged": [], "perturbed": False}
        strat = cfg.strategy
        if strat is Strategy.MPC_CBF_ONLY or not sensed:
            self.warm[i] = plan.control_array
            return u, info

        if model.is_double:
            nxt = plan.predicted_states[1]
            v_des, heading = nxt.linear_speed, nxt.heading
        else:
            v_des, heading = u.u1, snap[i].heading
        vel = v_des * np.array([math.cos(heading), math.sin(heading)])
        flagged = self._risk_group(i, snap, sensed, vel)
        info["flagged"] = flagged
        # random perturbation is a resolution method: it also fires once the
        # agent has stalled, when a zero relative velocity hides the risk
        stalled = (strat is Strategy.RANDOM_PERTURBATION and tick > 1
                   and abs(snap[i].linear_speed) < cfg.speed_threshold)
        if not flagged and not stalled:
            self.warm[i] = plan.control_array
            return u, info
        group = [i] + flagged
        speeds = np.array([v_des] + [snap[j].linear_speed for j in flagged])

        if strat.is_liveness:
            lset, proj, tie, ordering = self._target_speeds(group, speeds)
            info.update(target=proj.tolist(), tie=tie,
                        ordering=None if ordering is None else [group[g] for g in ordering.ranked()])
            if model.is_double:
                rows = next(A for A in lset.cone_matrices if np.all(A @ proj >= -1e-9))
                lc = LivenessConstraint(rows, speeds, own_index=0)
                plan = solve(snap[i], spec.goal, frozen, walls, lc, cfg.mpc, model, seed,
                             warm_start=plan.control_array, robust_bound=cfg.robust_bound)
                if plan.feasible:
                    u = plan.first
                info["perturbed"] = True
                info["liveness_violation"] = plan.liveness_violation
            else:
                v_new = self._guard_speed(i, snap, float(proj[0]), u.u2, u.u1)
                info.update(perturbed=True, commanded=v_new, nominal=u.u1)
                u = ControlInput(v_new, u.u2)
        else:  # random perturbation
            v_new = float(random_perturbation([v_des], self.rng_random, cfg.mpc.v_limit,
                                              cfg.random_scale)[0])
            # the turn rate is jittered too; a speed-only kick cannot leave a
            # jam whose way out needs a change of direction
            w_kick = float(self.rng_random.uniform(-cfg.random_scale, cfg.random_scale)
                           * cfg.mpc.omega_limit)
            info["perturbed"] = True
            if model.is_double:
                lo, hi = control_box(model, cfg.mpc)
                a = float(np.clip((v_new - snap[i].linear_speed) / cfg.dt * model.mass, lo[0], hi[0]))
                tq = float(np.clip(u.u2 + w_kick / cfg.dt * model.inertia, lo[1], hi[1]))
                for cand in (ControlInput(a, tq), ControlInput(a, u.u2)):
                    if (self._applied_slack(i, snap, cand) >= -1e-9
                            and self._bounds_ok(model, snap[i], cand)):
                        u = cand
                        break
            else:
                w = float(np.clip(u.u2 + w_kick, -cfg.mpc.omega_limit, cfg.mpc.omega_limit))
                u = ControlInput(self._guard_speed(i, snap, v_new, w, min(u.u1, v_new)), w)
            info["commanded"] = u.u1
        self.warm[i] = plan.control_array
        return u, info

    def _bounds_ok(self, model, state, u):
        nxt = step_discrete(model, self.cfg.mpc.integrator, state, u)
        return -1e-6 <= nxt.linear_speed <= self.cfg.mpc.v_limit + 1e-6

    def _applied_slack(self, i, snap, u):
        pos = np.array([s.position for s in snap])
        c, r = self.world.barrier_set(i, pos)
        nxt = step_discrete(self.world.models[i], self.cfg.mpc.integrator, snap[i], u)
        return _cbf_slack(snap[i].p, nxt.p, c, r, self.cfg.mpc.gamma)

    def _hold(self, i, state):
        model = self.world.models[i]
        if not model.is_double:
            return ControlInput(0.0, 0.0)
        lo, hi = control_box(model, self.cfg.mpc)
        u = np.clip([-state.linear_speed / self.cfg.dt * model.mass,
                     -state.angular_speed / self.cfg.dt * model.inertia], lo, hi)
        return ControlInput(float(u[0]), float(u[1]))

    # -- logging -------------------------------------------------------------
    def _rows(self, states, controls):
        lc = self.cfg.liveness
        pos = np.array([s.position for s in states])
        vel = [s.velocity for s in states]
        out = []
        for i, s in enumerate(states):
            ell = math.pi
            for j in range(len(states)):
                if j != i and np.any(pos[i] != pos[j]):
                    ell = min(ell, liveness_value(pos[i], vel[i], pos[j], vel[j], lc))
            c, r = self.world.barrier_set(i, pos)
            hmin = float(barrier_values(pos[i], c, r).min()) if r.size else math.inf
            u = controls[i]
            out.append([s.time, i, s.position[0], s.position[1], s.heading, s.linear_speed,
                        s.angular_speed, u.u1, u.u2, ell, hmin])
        return out

    # -- main loop -------------------------------------------------------------
    def run(self) -> TrajectoryLog:
        cfg, sc, world = self.cfg, self.sc, self.world
        k = len(sc.agents)
        states = [replace(a.start, time=0.0) for a in sc.agents]
        controls = [ControlInput(0.0, 0.0)] * k
        rows = self._rows(states, controls)
        decisions, collisions = [], []
        arrived = [False] * k
        stall = np.zeros(k, dtype=int)
        n_window = int(round(cfg.deadlock_window / cfg.dt))
        n_ticks = int(round(cfg.total_time / cfg.dt))
        terminated = "time"
        for tick in range(1, n_ticks + 1):
            for i in range(k):
                snap = list(states)
                if arrived[i]:
                    u, info = self._hold(i, snap[i]), {"parked": True}
                else:
                    u, info = self._control(i, snap, tick)
                if cfg.input_noise > 0:
                    du = self.rng_noise.uniform(-cfg.input_noise, cfg.input_noise, size=2)
                    u = ControlInput(u.u1 + du[0], u.u2 + du[1])
                nxt = replace(step_discrete(world.models[i], cfg.mpc.integrator, snap[i], u),
                              time=tick * cfg.dt)
                pos = np.array([s.position for s in snap])
                c, r = world.barrier_set(i, pos)
                info.update(tick=tick, agent=i, control=(u.u1, u.u2),
                            snapshot_times=[s.time for s in snap],
                            cbf_slack=_cbf_slack(snap[i].p, nxt.p, c, r, cfg.mpc.gamma))
                decisions.append(info)
                states[i] = nxt
                controls[i] = u
                pos[i] = nxt.position
                for pair in detect_collision(pos, world.foot, world.wc, world.wr):
                    if i in pair:
                        collisions.append((nxt.time, *pair))
            rows.extend(self._rows(states, controls))
            for i, s in enumerate(states):
                d = math.dist(s.position, sc.agents[i].goal)
                if d <= cfg.goal_tolerance:
                    arrived[i] = True
                below = abs(s.linear_speed) < cfg.speed_threshold and d > cfg.goal_tolerance
                stall[i] = stall[i] + 1 if below else 0
            if collisions:
                terminated = "collision"
                break
            if all(arrived):
                terminated = "arrived"
                break
            if cfg.stop_when_stalled and all(arrived[i] or stall[i] >= n_window for i in range(k)):
                terminated = "stalled"
                break
        return TrajectoryLog(k, cfg.dt, np.asarray(rows, dtype=float), decisions, collisions,
                             terminated)


def run(scenario: ScenarioSpec, cfg: SimConfig):
    """Simulate ``scenario`` and return ``(TrajectoryLog, MetricsReport)``."""
    log = Simulation(scenario, cfg).run()
    return log, compute_metrics(log, scenario, cfg)

"""Scenario geometry: doorway, intersection and hallway builders.

Walls are rasterised into overlapping circular barriers (radius 0.1 m, one
every 0.1 m). A wall "line" is the locus of circle centres; its physical
surface sits one circle radius to either side.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .barriers import BarrierSpec
from .dynamics import AgentState, ModelKind, RobotModel

WALL_RADIUS = 0.1
WALL_SPACING = 0.1
PAIR_CLEARANCE = 0.05


class ScenarioError(ValueError):
    """A scenario violates one of its invariants."""


@dataclass
class AgentSpec:
    model: RobotModel
    start: AgentState
    goal: tuple
    incentive: float = 0.5
    sensing_radius: float | None = None
    name: str = ""

    def __post_init__(self):
        self.goal = (float(self.goal[0]), float(self.goal[1]))
        if not 0.0 <= self.incentive <= 1.0:
            raise ScenarioError(f"agent {self.name!r}: incentive must lie in [0, 1]")


@dataclass
class ScenarioSpec:
    kind: str
    arena: tuple
    agents: list
    wall_obstacles: list = field(default_factory=list)
    gap_width: float | None = None
    corridor_width: float | None = None
    preferred_paths: list = field(default_factory=list)
    name: str = ""
    wall_segments: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("doorway", "intersection", "hallway", "custom"):
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        self.arena = (float(self.arena[0]), float(self.arena[1]))
        self.wall_segments = [tuple(float(c) for c in seg) for seg in self.wall_segments]
        if self.wall_segments and not self.wall_obstacles:
            self.wall_obstacles = [w for seg in self.wall_segments
                                   for w in wall_line(seg[:2], seg[2:])]
        for i, a in enumerate(self.agents):
            if not a.name:
                a.name = f"agent{i + 1}"
        if len(self.preferred_paths) < len(self.agents):
            self.preferred_paths = [default_path(a, self.conflict_point())
                                    for a in self.agents]
        self.preferred_paths = [np.asarray(p, dtype=float) for p in self.preferred_paths]
        for a in self.agents:
            if a.sensing_radius is None:
                a.sensing_radius = float(np.hypot(*self.arena))

    @property
    def bounds(self):
        """Arena rectangle centred on the origin: (xmin, xmax, ymin, ymax)."""
        w, h = self.arena
        return -w / 2, w / 2, -h / 2, h / 2

    @property
    def flow_width(self) -> float | None:
        return self.gap_width if self.gap_width is not None else self.corridor_width

    def conflict_point(self):
        if self.kind in ("doorway", "intersection"):
            return (0.0, 0.0)
        return None

    def wall_centers(self) -> np.ndarray:
        if not self.wall_obstacles:
            return np.zeros((0, 2))
        return np.array([w.center for w in self.wall_obstacles])

    def wall_radii(self) -> np.ndarray:
        return np.array([w.radius for w in self.wall_obstacles])

    def with_agents(self, agents) -> "ScenarioSpec":
        return replace(self, agents=list(agents), preferred_paths=[])


def default_path(agent: AgentSpec, via=None) -> np.ndarray:
    pts = [agent.start.position]
    if via is not None:
        pts.append(tuple(via))
    pts.append(agent.goal)
    return np.asarray(pts, dtype=float)


def wall_line(p0, p1, radius: float = WALL_RADIUS, spacing: float = WALL_SPACING):
    """Circles with centres every ``spacing`` metres from p0 to p1 inclusive."""
    p0, p1 = np.asarray(p0, dtype=float), np.asarray(p1, dtype=float)
    n = max(1, int(round(np.linalg.norm(p1 - p0) / spacing)))
    return [BarrierSpec.circle(p0 + (p1 - p0) * s, radius) for s in np.linspace(0, 1, n + 1)]


def validate(sc: ScenarioSpec) -> ScenarioSpec:
    """Raise :class:`ScenarioError` naming the first violated invariant."""
    xmin, xmax, ymin, ymax = sc.bounds
    if sc.arena[0] <= 0 or sc.arena[1] <= 0:
        raise ScenarioError("arena dimensions must be > 0")
    if not sc.agents:
        raise ScenarioError("scenario has no agents")
    centers, radii = sc.wall_centers(), sc.wall_radii()
    for a in sc.agents:
        for label, p in (("start", a.start.position), ("goal", a.goal)):
            if not (xmin <= p[0] <= xmax and ymin <= p[1] <= ymax):
                raise ScenarioError(f"{a.name}: {label} {p} lies outside the arena")
            if radii.size:
                gap = np.hypot(*(centers - p).T) - radii - a.model.footprint_radius
                if np.any(gap < 0):
                    raise ScenarioError(f"{a.name}: {label} {p} lies inside a wall obstacle")
    for i, a in enumerate(sc.agents):
        for b in sc.agents[i + 1:]:
            d = math.dist(a.start.position, b.start.position)
            if d < a.model.footprint_radius + b.model.footprint_radius + PAIR_CLEARANCE:
                raise ScenarioError(f"{a.name} and {b.name} start overlapping")
    if sc.kind == "doorway":
        if sc.gap_width is None:
            raise ScenarioError("doorway scenario needs gap_width")
        diam = max(2 * a.model.footprint_radius for a in sc.agents)
        if sc.gap_width <= diam:
            raise ScenarioError(f"gap_width {sc.gap_width} must exceed the agent diameter {diam}")
    return sc


def conflict_window(sc: ScenarioSpec, speed: float = 0.3, dt: float = 0.01):
    """Longest time window in which two agents' preferred paths, traversed at
    ``speed`` and swept with their footprints, overlap.

    Returns ``(duration, (i, j))`` for the worst pair.
    """
    tracks = []
    for path in sc.preferred_paths:
        seg = np.diff(path, axis=0)
        lens = np.hypot(*seg.T)
        cum = np.concatenate([[0], np.cumsum(lens)])
        tracks.append((path, cum))
    horizon = max(c[-1] for _, c in tracks) / speed
    ts = np.arange(0, horizon + dt, dt)

    def pos(track, t):
        path, cum = track
        s = np.clip(t * speed, 0, cum[-1])
        return np.stack([np.interp(s, cum, path[:, 0]), np.interp(s, cum, path[:, 1])], axis=1)

    P = [pos(tr, ts) for tr in tracks]
    best = (0.0, None)
    for i in range(len(P)):
        for j in range(i + 1, len(P)):
            reach = sc.agents[i].model.footprint_radius + sc.agents[j].model.footprint_radius
            hit = np.hypot(*(P[i] - P[j]).T) < reach
            run = longest = 0
            for h in hit:
                run = run + 1 if h else 0
                longest = max(longest, run)
            if longest * dt > best[0]:
                best = (longest * dt, (i, j))
    return best


def is_social_minigame(sc: ScenarioSpec, delta: float = 0.5, speed: float = 0.3) -> bool:
    return conflict_window(sc, speed)[0] > delta


def _model(kind, footprint):
    return RobotModel(ModelKind(kind), footprint_radius=footprint)


def doorway(kind: str = "single_integrator_unicycle", gap: float = 0.5, arena: float = 3.0,
            footprint: float = 0.15, offset: float = 1.27, incentives=(0.7, 0.4),
            sensing_radius: float | None = None) -> ScenarioSpec:
    """Wall along x = 0 with a centred gap; two agents cross it diagonally.

    The agents start mirror-symmetrically on the left and aim for the mirrored
    corners on the right, so their preferred paths cross in the gap.
    """
    half = arena / 2
    edge = gap / 2 + WALL_RADIUS
    segments = [(0.0, edge, 0.0, half), (0.0, -edge, 0.0, -half)]
    agents = []
    for k, sgn in enumerate((1.0, -1.0)):
        start = (-offset, sgn * offset)
        goal = (offset, -sgn * offset)
        heading = math.atan2(-start[1], -start[0])
        agents.append(AgentSpec(_model(kind, footprint), AgentState(start, heading), goal,
                                incentives[k], sensing_radius))
    return validate(ScenarioSpec("doorway", (arena, arena), agents, gap_width=gap,
                                 name="doorway", wall_segments=segments))


def intersection(kind: str = "single_integrator_unicycle", width: float = 1.5, arena: float = 3.6,
                 footprint: float = 0.15, reach: float = 1.6, stagger: float = 0.2,
                 incentives=(0.7, 0.4), sensing_radius: float | None = None) -> ScenarioSpec:
    """Four-way crossing of two corridors; one agent heads east, one north.

    The northbound agent starts ``stagger`` metres further from the centre and
    stops the same amount short, so both paths have equal length but the
    agents reach the conflict zone slightly apart in time.
    """
    half, w = arena / 2, width / 2
    segments = []
    for sx in (1, -1):
        for sy in (1, -1):
            segments.append((sx * w, sy * w, sx * w, sy * half))
            segments.append((sx * (w + WALL_SPACING), sy * w, sx * half, sy * w))
    agents = [
        AgentSpec(_model(kind, footprint), AgentState((-reach, 0.0), 0.0), (reach, 0.0),
                  incentives[0], sensing_radius),
        AgentSpec(_model(kind, footprint), AgentState((0.0, -reach - stagger), math.pi / 2),
                  (0.0, reach - stagger),
                  incentives[1], sensing_radius),
    ]
    return validate(ScenarioSpec("intersection", (arena, arena), agents,
                                 corridor_width=width - 2 * WALL_RADIUS, name="intersection",
                                 wall_segments=segments))


def hallway(kind: str = "single_integrator_unicycle", width: float = 1.5, length: float = 4.0,
            footprint: float = 0.15, reach: float = 1.8, lateral: float = 0.08,
            incentives=(0.7, 0.4), sensing_radius: float | None = 1.0) -> ScenarioSpec:
    """Straight corridor with two agents walking towards each other.

    Head-on agents are on a liveness-violating course from the first tick, so
    sensing defaults to a 1 m neighbourhood: with full-arena sensing one agent
    would crawl at the yielding speed along the whole corridor.
    """
    half_l, w = length / 2, width / 2
    segments = [(-half_l, w, half_l, w), (-half_l, -w, half_l, -w)]
    agents = [
        AgentSpec(_model(kind, footprint), AgentState((-reach, lateral), 0.0), (reach, lateral),
                  incentives[0], sensing_radius),
        AgentSpec(_model(kind, footprint), AgentState((reach, -lateral), math.pi),
                  (-reach, -lateral), incentives[1], sensing_radius),
    ]
    return validate(ScenarioSpec("hallway", (length, width), agents,
                                 corridor_width=width - 2 * WALL_RADIUS, name="hallway",
                                 wall_segments=segments))


def dead_end(kind: str = "single_integrator_unicycle", length: float = 3.0, width: float = 1.0,
             footprint: float = 0.15, wall_x: float = 0.5) -> ScenarioSpec:
    """One agent whose goal lies behind a closed wall.

    The agent ends up parked against the wall with its barrier near zero, the
    tightest margin a planner produces on its own, where bounded input noise
    shows up in the barrier trace.
    """
    half_w = width / 2
    agent = AgentSpec(_model(kind, footprint), AgentState((-length / 2 + 0.3, 0.0), 0.0),
                      (wall_x + 2 * WALL_RADIUS + footprint + 0.2, 0.0), 0.5)
    return validate(ScenarioSpec("custom", (length, width), [agent], name="dead_end",
                                 wall_segments=[(wall_x, -half_w, wall_x, half_w)]))


BUILDERS = {"doorway": doorway, "intersection": intersection, "hallway": hallway}

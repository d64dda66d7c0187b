"""Scenario files, trajectory CSVs and metrics JSON.

Scenario files are flat ``key = value`` text. Top-level keys describe the
arena and walls; each ``[agent]`` section adds one agent::

    kind = doorway
    arena = 3.0 3.0
    gap_width = 0.5
    wall = 0.0 0.35 0.0 1.5        # segment x0 y0 x1 y1, rasterised into circles
    circle = 0.5 0.5 0.1           # single circular obstacle x y r

    [agent]
    model = single_integrator_unicycle
    start = -1.27 1.27 -2.356      # x y heading
    goal = 1.27 -1.27
    incentive = 0.7

``wall``, ``circle`` and ``path`` may repeat. Blank lines and ``#`` comments
are ignored.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .barriers import BarrierSpec
from .dynamics import AgentState, ModelKind, RobotModel
from .scenarios import AgentSpec, ScenarioError, ScenarioSpec, validate
from .simulator import COLUMNS, TrajectoryLog

DATA_DIR = Path(__file__).parent / "data"
CSV_DIGITS = 9

_TOP_SCALARS = {"gap_width", "corridor_width"}
_TOP_KEYS = {"kind", "name", "arena", "wall", "circle"} | _TOP_SCALARS
_AGENT_KEYS = {"model", "start", "goal", "incentive", "footprint", "sensing_radius", "name",
               "path", "mass", "inertia"}


class ParseError(ValueError):
    """Malformed scenario text; the message names the line and field."""


def bundled_scenarios() -> dict:
    return {p.stem: p for p in sorted(DATA_DIR.glob("*.cfg"))}


def resolve_scenario_path(name_or_path) -> Path:
    """Accept a file path or the stem of a bundled scenario (``doorway``)."""
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = bundled_scenarios()
    if str(name_or_path) in bundled:
        return bundled[str(name_or_path)]
    raise FileNotFoundError(f"no scenario file {name_or_path!r} "
                            f"(bundled: {', '.join(bundled)})")


def _floats(text, n, lineno, key):
    try:
        vals = [float(t) for t in text.split()]
    except ValueError:
        raise ParseError(f"line {lineno}: field {key!r} expects numbers, got {text!r}") from None
    if n is not None and len(vals) not in (n if isinstance(n, tuple) else (n,)):
        raise ParseError(f"line {lineno}: field {key!r} expects {n} numbers, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise ParseError(f"line {lineno}: field {key!r} has a non-finite value")
    return vals


def parse_scenario(text: str, source: str = "<string>") -> ScenarioSpec:
    top = {"wall": [], "circle": []}
    agents = []
    current = top
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[agent]":
                raise ParseError(f"{source}: line {lineno}: unknown section {line!r}")
            current = {"path": [], "_line": lineno}
            agents.append(current)
            continue
        if "=" not in line:
            raise ParseError(f"{source}: line {lineno}: expected 'key = value', got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        allowed = _TOP_KEYS if current is top else _AGENT_KEYS
        if key not in allowed:
            raise ParseError(f"{source}: line {lineno}: unknown field {key!r}")
        try:
            if key in ("wall", "circle", "path"):
                current[key].append(_floats(val, {"wall": 4, "circle": 3, "path": None}[key],
                                            lineno, key))
            elif key in current:
                raise ParseError(f"line {lineno}: field {key!r} given twice")
            elif key in ("kind", "name", "model"):
                current[key] = val
            elif key == "arena":
                current[key] = _floats(val, 2, lineno, key)
            elif key == "start":
                current[key] = _floats(val, (2, 3), lineno, key)
            elif key == "goal":
                current[key] = _floats(val, 2, lineno, key)
            else:
                current[key] = _floats(val, 1, lineno, key)[0]
        except ParseError as e:
            raise ParseError(f"{source}: {e}") from None
    if not agents and len(top) == 2 and not top["wall"] and not top["circle"]:
        raise ParseError(f"{source}: empty scenario file")
    for key in ("kind", "arena"):
        if key not in top:
            raise ParseError(f"{source}: missing top-level field {key!r}")

    specs, paths = [], []
    for n, a in enumerate(agents, start=1):
        for key in ("model", "start", "goal"):
            if key not in a:
                raise ParseError(f"{source}: agent {n} (line {a['_line']}): missing field {key!r}")
        try:
            model = RobotModel(ModelKind(a["model"]), mass=a.get("mass", 1.0),
                               inertia=a.get("inertia", 0.1),
                               footprint_radius=a.get("footprint", 0.15))
        except ValueError as e:
            raise ParseError(f"{source}: agent {n} (line {a['_line']}): {e}") from None
        start = a["start"]
        state = AgentState((start[0], start[1]), start[2] if len(start) > 2 else 0.0)
        specs.append(AgentSpec(model, state, tuple(a["goal"]), a.get("incentive", 0.5),
                               a.get("sensing_radius"), a.get("name", "")))
        paths.append(np.asarray(a["path"]).reshape(-1, 2) if a["path"] else None)
    walls = [BarrierSpec.circle(c[:2], c[2]) for c in top["circle"]]
    try:
        sc = ScenarioSpec(top["kind"], tuple(top["arena"]), specs, walls,
                          gap_width=top.get("gap_width"), corridor_width=top.get("corridor_width"),
                          name=top.get("name", ""), wall_segments=top["wall"])
    except ScenarioError as e:
        raise ScenarioError(f"{source}: {e}") from None
    if sc.wall_segments and walls:
        # circles and segments together: rasterise the segments and append
        from .scenarios import wall_line
        sc.wall_obstacles = walls + [w for s in sc.wall_segments for w in wall_line(s[:2], s[2:])]
    for i, p in enumerate(paths):
        if p is not None:
            sc.preferred_paths[i] = p
    return validate(sc)


def load_scenario(path) -> ScenarioSpec:
    path = resolve_scenario_path(path)
    return parse_scenario(Path(path).read_text(), str(path))


def _fmt(x: float) -> str:
    return format(float(x), f".{CSV_DIGITS}g")


def _num(x: float) -> str:
    """Shortest text that parses back to the same float."""
    return repr(float(x))


def dump_scenario(sc: ScenarioSpec) -> str:
    lines = [f"kind = {sc.kind}"]
    if sc.name:
        lines.append(f"name = {sc.name}")
    lines.append(f"arena = {_num(sc.arena[0])} {_num(sc.arena[1])}")
    for key in ("gap_width", "corridor_width"):
        if getattr(sc, key) is not None:
            lines.append(f"{key} = {_num(getattr(sc, key))}")
    if sc.wall_segments:
        lines += ["wall = " + " ".join(_num(c) for c in seg) for seg in sc.wall_segments]
    else:
        lines += [f"circle = {_num(w.center[0])} {_num(w.center[1])} {_num(w.radius)}"
                  for w in sc.wall_obstacles]
    for a in sc.agents:
        s = a.start
        lines += ["", "[agent]", f"name = {a.name}", f"model = {a.model.kind.value}",
                  f"start = {_num(s.position[0])} {_num(s.position[1])} {_num(s.heading)}",
                  f"goal = {_num(a.goal[0])} {_num(a.goal[1])}",
                  f"incentive = {_num(a.incentive)}",
                  f"footprint = {_num(a.model.footprint_radius)}",
                  f"sensing_radius = {_num(a.sensing_radius)}"]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Trajectory CSV
# --------------------------------------------------------------------------

def trajectory_csv(log: TrajectoryLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in log.rows:
        w.writerow([_fmt(row[0]), str(int(row[1]))] + [_fmt(x) for x in row[2:]])
    return buf.getvalue()


def write_trajectory_csv(log: TrajectoryLog, path) -> Path:
    path = Path(path)
    path.write_text(trajectory_csv(log))
    return path


def read_trajectory_csv(path, dt: float | None = None) -> TrajectoryLog:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        rows = np.array([[float(x) for x in r] for r in reader], dtype=float)
    n_agents = int(rows[:, 1].max()) + 1 if rows.size else 0
    if dt is None:
        t = np.unique(rows[:, 0])
        dt = float(t[1] - t[0]) if t.size > 1 else 0.0
    return TrajectoryLog(n_agents, dt, rows)


def round_trip_rows(log: TrajectoryLog) -> np.ndarray:
    """Rows as they appear after a CSV write/read (9 significant digits)."""
    return np.array([[float(_fmt(x)) for x in r] for r in log.rows])


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else None
    return x


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())

import math

import numpy as np
import pytest

from minigame_nav.dynamics import AgentState, ModelKind, RobotModel
from minigame_nav.scenarios import (AgentSpec, BUILDERS, ScenarioError, ScenarioSpec,
                                    conflict_window, dead_end, doorway, is_social_minigame,
                                    validate)
from minigame_nav.simulator import (COLUMNS, SimConfig, Strategy, TrajectoryLog, compute_metrics,
                                    detect_collision, detect_deadlock, random_perturbation, run)

import oracles


def _agent(start, goal, heading=0.0, kind=ModelKind.SINGLE):
    return AgentSpec(RobotModel(kind), AgentState(start, heading), goal)


# -- scenarios -----------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(BUILDERS))
@pytest.mark.parametrize("kind", ["single_integrator_unicycle", "double_integrator_diffdrive"])
def test_builders_validate(name, kind):
    sc = BUILDERS[name](kind)
    assert len(sc.agents) == 2 and sc.wall_obstacles
    assert all(a.model.kind.value == kind for a in sc.agents)


def test_doorway_geometry():
    sc = doorway()
    assert sc.gap_width == 0.5 and sc.arena == (3.0, 3.0)
    c, r = sc.wall_centers(), sc.wall_radii()
    assert np.all(r == 0.1)
    assert np.all(np.abs(c[:, 0]) < 1e-12)
    # nothing blocks the gap
    assert np.min(np.abs(c[:, 1]) - r) == pytest.approx(0.25)


@pytest.mark.parametrize("name", sorted(BUILDERS))
def test_scenarios_are_social_minigames(name):
    window, pair = conflict_window(BUILDERS[name]())
    assert window > 0.5 and pair == (0, 1)
    assert is_social_minigame(BUILDERS[name]())


def test_validation_errors():
    with pytest.raises(ScenarioError, match="outside"):
        ScenarioSpec("custom", (2, 2), [_agent((1.5, 0), (0, 0))])
        validate(ScenarioSpec("custom", (2, 2), [_agent((1.5, 0), (0, 0))]))
    with pytest.raises(ScenarioError, match="agent1: goal"):
        validate(ScenarioSpec("custom", (3, 3), [_agent((-1, 0), (0, 0))],
                              wall_segments=[(0, -1, 0, 1)]))
    with pytest.raises(ScenarioError, match="overlapping"):
        validate(ScenarioSpec("custom", (3, 3), [_agent((0, 0), (1, 0)), _agent((0.2, 0), (-1, 0))]))
    with pytest.raises(ScenarioError, match="gap_width"):
        doorway(gap=0.25)
    with pytest.raises(ScenarioError):
        ScenarioSpec("maze", (3, 3), [])
    with pytest.raises(ScenarioError):
        AgentSpec(RobotModel(), AgentState((0, 0)), (1, 1), incentive=2.0)


# -- adjudication --------------------------------------------------------------

def test_collision_examples():
    assert detect_collision([(0, 0), (0.5, 0)], [0.25, 0.25]) == []
    assert detect_collision([(0, 0), (0.4, 0)], [0.25, 0.25]) == [(0, 1)]
    assert detect_collision([(0, 0)], [0.15], np.array([[0.05, 0.0]]), np.array([0.1])) \
        == [(0, "wall")]


def test_deadlock_examples():
    cfg = SimConfig()
    n = int(cfg.deadlock_window / cfg.dt)
    goal = (1.0, 0.0)
    parked = np.tile(goal, (n, 1))
    assert not detect_deadlock(np.zeros(n), parked, goal, cfg)
    off = np.zeros((n, 2))
    assert detect_deadlock(np.zeros(n), off, goal, cfg)
    half = np.concatenate([np.zeros(n // 2), np.full(n - n // 2, 0.2)])
    assert not detect_deadlock(half, off, goal, cfg)
    assert not detect_deadlock(half, off, goal, cfg, anywhere=True)
    assert not detect_deadlock(np.zeros(n - 1), off[:-1], goal, cfg)


def test_random_perturbation_seeded():
    a = random_perturbation([0.1, 0.2], 7, 0.3)
    b = random_perturbation([0.1, 0.2], 7, 0.3)
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= 0) & (a <= 0.3))
    np.testing.assert_array_equal(random_perturbation([0.1, 0.2], 7, 0.3, scale=0.0), [0.1, 0.2])
    draws = np.concatenate([random_perturbation(np.full(100, 0.15), s, 0.3) for s in range(20)])
    assert draws.min() >= 0.0 and draws.max() <= 0.3 and draws.std() > 0.03


# -- metrics on constructed logs -----------------------------------------------

def _straight_log(arrive=(2.0, 2.0), dt=0.1, speed=0.5):
    """Two agents whose distance to goal first drops to the 0.1 m tolerance at ``arrive``."""
    sc = ScenarioSpec("custom", (4, 4), [_agent((-1.1, 0.5), (0, 0.5)), _agent((-1.1, -0.5), (0, -0.5))],
                      gap_width=0.5)
    T = max(arrive)
    rows = []
    for k in range(int(round(T / dt)) + 1):
        t = k * dt
        for i, (a, ta) in enumerate(zip(sc.agents, arrive)):
            gap = 0.0 if t >= ta - 1e-9 else 0.1 + 0.5 * (ta - t)
            rows.append([t, i, a.goal[0] - gap, a.goal[1], 0.0, speed, 0.0, speed, 0.0, math.pi, 1.0])
    return sc, TrajectoryLog(2, dt, np.array(rows))


def test_flow_rate_formula():
    sc, log = _straight_log()
    m = compute_metrics(log, sc)
    assert m.flow_rate_defined
    assert m.specific_flow_rate == oracles.FROZEN["flow_rate"] == oracles.flow_rate(2, 0.5, 2.0)
    assert m.makespan_ratio == 1.0
    assert m.avg_delta_v == [0.0, 0.0]
    assert m.path_deviation == pytest.approx([0.0, 0.0], abs=1e-12)
    assert m.collision_rate == 0.0 and m.success == [True, True]


def test_makespan_ratio_and_undefined_flow():
    sc, log = _straight_log(arrive=(1.0, 2.0))
    m = compute_metrics(log, sc)
    assert m.makespan_ratio == pytest.approx(2.0)
    sc2 = ScenarioSpec("custom", (4, 4), sc.agents, gap_width=0.5)
    sc2.agents[1].goal = (1.5, 1.5)
    m2 = compute_metrics(log, sc2)
    assert m2.success == [True, False]
    assert not m2.flow_rate_defined and m2.specific_flow_rate == 0.0


# -- simulation ------------------------------------------------------------------

def test_single_agent_empty_arena():
    sc = ScenarioSpec("custom", (4, 4), [_agent((-1.5, 0.2), (1.5, -0.1), heading=0.3)])
    log, m = run(sc, SimConfig(strategy="liveness_perturbation"))
    assert m.success == [True] and m.collision_rate == 0.0
    assert m.path_deviation[0] < 0.05
    assert log.terminated == "arrived"


def test_log_layout():
    sc = ScenarioSpec("custom", (4, 4), [_agent((-1, 0.5), (1, 0.5)), _agent((1, -0.5), (-1, -0.5), math.pi)])
    log, _ = run(sc, SimConfig(total_time=1.0))
    assert log.rows.shape == (2 * 11, len(COLUMNS))
    np.testing.assert_allclose(np.diff(log.times), 0.1)
    assert list(log.rows[:4, 1]) == [0, 1, 0, 1]


def test_run_is_deterministic():
    cfg = SimConfig(strategy="random_perturbation", seed=3, total_time=4.0, input_noise=0.01)
    a, _ = run(doorway(), cfg)
    b, _ = run(doorway(), cfg)
    assert a.rows.tobytes() == b.rows.tobytes()


def test_asynchronous_snapshots():
    log, _ = run(doorway(), SimConfig(strategy="liveness_perturbation", total_time=1.0))
    for d in log.decisions:
        t, i = d["tick"], d["agent"]
        expected = [t * 0.1 if j < i else (t - 1) * 0.1 for j in range(2)]
        assert d["snapshot_times"] == pytest.approx(expected, abs=1e-12)


def test_mpc_only_doorway_halts():
    log, m = run(doorway(), SimConfig(strategy="mpc_cbf_only", total_time=10.0,
                                      stop_when_stalled=False))
    V = log.column("v")
    t = log.times
    assert np.all(V[t >= 9.0] < SimConfig().speed_threshold)
    assert m.collision_rate == 0.0 and m.deadlock_rate == 1.0


def test_liveness_doorway_ratio_reaches_zeta_before_gap():
    log, m = run(doorway(), SimConfig(strategy="liveness_perturbation"))
    assert m.deadlock_rate == 0.0 and m.collision_rate == 0.0 and all(m.success)
    X, V = log.column("x"), log.column("v")
    before = np.all(X < -0.3, axis=1)
    ratio = V.max(axis=1) / np.maximum(V.min(axis=1), 1e-12)
    assert np.any(ratio[before] >= 2.0 - 1e-9)


def test_perturbed_commands_respect_zeta():
    zeta = SimConfig().liveness.zeta
    log, _ = run(doorway(), SimConfig(strategy="liveness_perturbation", seed=1))
    U = log.column("u1")
    perturbed = [d for d in log.decisions if d.get("perturbed")]
    assert perturbed
    effective = set()
    for d in perturbed:
        target = np.asarray(d["target"])
        assert target.max() >= zeta * target.min() - 1e-9
        assert d["commanded"] <= target[0] + 1e-12
        if abs(d["commanded"] - d["nominal"]) > 1e-12:
            effective.add(d["tick"])
    # wherever the perturbation changed a command, the pair's applied speeds differ by zeta
    assert effective
    for t in effective:
        assert U[t].max() >= zeta * U[t].min() - 1e-9


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(deadlock_window=0.05)
    with pytest.raises(ValueError):
        SimConfig(strategy="teleport")
    assert SimConfig(strategy="liveness_cbf_constraint").strategy is Strategy.LIVENESS_CBF_CONSTRAINT


def test_dead_end_scenario():
    sc = dead_end()
    assert len(sc.agents) == 1 and sc.kind == "custom"
    assert sc.agents[0].goal[0] > sc.wall_segments[0][0]

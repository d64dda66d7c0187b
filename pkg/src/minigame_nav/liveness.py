"""Liveness function, zeta-cone liveness sets and minimally invasive projection.

A pair of agents is at risk of deadlock when the angle between their
separation ``p_j - p_i`` and relative velocity ``v_i - v_j`` is small, i.e.
they are closing in almost head on. The cure is to make their speeds differ
by a factor ``zeta``: the joint speed vector is projected onto the nearest
point of the liveness set, a union of polyhedral cones in speed space.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

TIE_TOL = 1e-12


class TieError(RuntimeError):
    """Projection is not unique and no priority ordering was supplied."""


@dataclass(frozen=True)
class LivenessConfig:
    zeta: float = 2.0
    ell_thresh: float | None = None
    # relative speeds at or below this count as "not closing"
    epsilon_denominator: float = 1e-9
    speed_similarity_eps: float = 0.0

    def __post_init__(self):
        if self.zeta < 2.0:
            raise ValueError(f"zeta must be >= 2, got {self.zeta}")
        if self.epsilon_denominator <= 0:
            raise ValueError("epsilon_denominator must be > 0")
        if self.ell_thresh is None:
            object.__setattr__(self, "ell_thresh", default_threshold(self.zeta))

    @property
    def psi(self) -> float:
        return math.atan(self.zeta)


def default_threshold(zeta: float) -> float:
    return math.pi / 4.0 - math.atan(1.0 / zeta)


def liveness_value(p_i, v_i, p_j, v_j, cfg: LivenessConfig | None = None) -> float:
    """Angle in [0, pi] between ``p_j - p_i`` and ``v_i - v_j``.

    0 means a direct collision course; pi means the agents move apart.
    Zero relative velocity returns pi (nothing is closing). The angle comes
    from atan2 of the cross and dot products, which stays accurate near 0
    and pi where an arccos of the cosine loses half the digits.
    """
    cfg = cfg or LivenessConfig()
    d = np.asarray(p_j, dtype=float) - np.asarray(p_i, dtype=float)
    w = np.asarray(v_i, dtype=float) - np.asarray(v_j, dtype=float)
    nd, nw = float(np.hypot(*d)), float(np.hypot(*w))
    if nd == 0.0:
        raise ValueError("liveness undefined for coincident positions")
    if nw <= cfg.epsilon_denominator:
        return math.pi
    return math.atan2(abs(float(d[0] * w[1] - d[1] * w[0])), float(d @ w))


def pairwise_liveness(positions, velocities, cfg: LivenessConfig | None = None) -> np.ndarray:
    """Symmetric matrix of liveness values (diagonal = pi)."""
    n = len(positions)
    out = np.full((n, n), math.pi)
    for i, j in itertools.combinations(range(n), 2):
        out[i, j] = out[j, i] = liveness_value(positions[i], velocities[i],
                                               positions[j], velocities[j], cfg)
    return out


def detect_deadlock_risk(states, cfg: LivenessConfig | None = None, velocities=None):
    """Unordered index pairs (i, j), i < j, whose liveness is <= the threshold.

    ``velocities`` overrides the velocity vectors stored in ``states`` (the
    simulator passes an agent's intended velocity here).
    """
    cfg = cfg or LivenessConfig()
    if len(states) < 2:
        raise ValueError("need at least two agents")
    pos = [s.p for s in states]
    vel = [s.velocity for s in states] if velocities is None else list(velocities)
    risky = set()
    for i, j in itertools.combinations(range(len(states)), 2):
        if liveness_value(pos[i], vel[i], pos[j], vel[j], cfg) <= cfg.ell_thresh:
            risky.add((i, j))
    return risky


# --------------------------------------------------------------------------
# Liveness sets
# --------------------------------------------------------------------------

A3 = np.array([[1.0, -2.0, 0.0],
               [1.0, 0.0, -3.0],
               [0.0, 3.0, -2.0]])


def _rank_rows(k: int, zeta: float) -> np.ndarray:
    """Rows for agents ranked fastest (column 0) to slowest (column k-1)."""
    if k == 2:
        return np.array([[1.0, -zeta]])
    if k == 3:
        return A3.copy()
    rows = np.zeros((k - 1, k))
    for r in range(k - 1):
        rows[r, r], rows[r, r + 1] = 1.0, -zeta
    return rows


@dataclass
class LivenessSet:
    """Union of cones ``{v : A v >= 0}``, one per speed-rank permutation."""
    agent_count: int
    zeta: float = 2.0
    cone_matrices: list = field(default_factory=list)
    rank_orders: list = field(default_factory=list)

    def __post_init__(self):
        k = int(self.agent_count)
        if k < 2:
            raise ValueError("liveness set needs k >= 2")
        if not self.cone_matrices:
            base = _rank_rows(k, self.zeta)
            for order in itertools.permutations(range(k)):
                A = np.zeros_like(base)
                A[:, list(order)] = base
                if any(np.allclose(A, B) for B in self.cone_matrices):
                    continue
                self.cone_matrices.append(A)
                self.rank_orders.append(order)

    @classmethod
    def for_agents(cls, k: int, cfg: LivenessConfig | None = None) -> "LivenessSet":
        return cls(k, (cfg or LivenessConfig()).zeta)


def contains(lset: LivenessSet, speeds, tol: float = 1e-12) -> bool:
    v = np.asarray(speeds, dtype=float)
    return any(bool(np.all(A @ v >= -tol)) for A in lset.cone_matrices)


def _project_polyhedron(G: np.ndarray, g: np.ndarray, v: np.ndarray, tol: float = 1e-10):
    """Nearest point of ``{x : G x >= g}`` to ``v`` by active-set enumeration.

    Every face of a polyhedron in R^k is the solution set of at most k active
    constraints, so enumerating subsets of size <= k and keeping the feasible
    equality-constrained projections finds the exact minimiser.
    """
    if np.all(G @ v >= g - tol):
        return v.copy()
    k = v.size
    best, best_d = None, math.inf
    for size in range(1, k + 1):
        for S in itertools.combinations(range(G.shape[0]), size):
            GS = G[list(S)]
            M = GS @ GS.T
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            lam = np.linalg.solve(M, GS @ v - g[list(S)])
            x = v - GS.T @ lam
            if np.all(G @ x >= g - tol):
                d = float(np.linalg.norm(x - v))
                if d < best_d - 1e-15:
                    best, best_d = x, d
    return best


def _cone_constraints(A: np.ndarray, v_limit: float | None):
    k = A.shape[1]
    G = [A, np.eye(k)]
    g = [np.zeros(A.shape[0]), np.zeros(k)]
    if v_limit is not None:
        G.append(-np.eye(k))
        g.append(np.full(k, -float(v_limit)))
    return np.vstack(G), np.concatenate(g)


def projection_candidates(lset: LivenessSet, speeds, v_limit: float | None = None):
    """Per-cone nearest points as ``(distance, point, cone_index)`` sorted by distance."""
    v = np.asarray(speeds, dtype=float)
    out = []
    for ci, A in enumerate(lset.cone_matrices):
        G, g = _cone_constraints(A, v_limit)
        x = _project_polyhedron(G, g, v)
        if x is None:
            continue
        x = np.maximum(x, 0.0)
        out.append((float(np.linalg.norm(x - v)), x, ci))
    out.sort(key=lambda t: (t[0], t[2]))
    return out


def project_to_liveness(lset: LivenessSet, speeds, v_limit: float | None = None,
                        return_candidates: bool = False):
    """Euclidean projection onto the liveness set.

    Returns ``(projected, tie_flag)``; with ``return_candidates`` a third item
    lists the distinct equidistant minimisers (a single entry without a tie).
    ``v_limit`` additionally intersects every cone with the actuator box.
    """
    v = np.asarray(speeds, dtype=float)
    if np.any(v < 0):
        raise ValueError("speeds must be nonnegative")
    if contains(lset, v) and (v_limit is None or np.all(v <= v_limit)):
        res = (v.copy(), False)
        return (*res, [v.copy()]) if return_candidates else res
    cands = projection_candidates(lset, v, v_limit)
    d0 = cands[0][0]
    ties = [cands[0][1]]
    for d, x, _ in cands[1:]:
        if d - d0 > TIE_TOL:
            break
        if all(np.linalg.norm(x - y) > 1e-9 for y in ties):
            ties.append(x)
    res = (ties[0], len(ties) > 1)
    return (*res, ties) if return_candidates else res


def choose_by_priority(candidates, priority) -> np.ndarray:
    """Pick the candidate in which agents with higher priority are faster.

    ``priority`` lists agent positions (indices into the speed vector) from
    highest to lowest priority; candidates are compared lexicographically on
    the speeds read in that order.
    """
    order = list(priority)
    return max(candidates, key=lambda x: tuple(x[i] for i in order))


def apply_min_invasive_perturbation(states, ordering, lset: LivenessSet,
                                    cfg: LivenessConfig | None = None,
                                    speeds=None, v_limit: float | None = None):
    """Speed-only correction of a risk group.

    Returns ``(speed_commands, heading_commands)``; headings are passed through
    untouched. ``ordering`` is a priority list of local indices (highest first)
    or a :class:`~minigame_nav.auction.PriorityOrdering`; it is only consulted
    when the projection is tied.
    """
    v = np.array([s.linear_speed for s in states] if speeds is None else speeds, dtype=float)
    headings = np.array([s.heading for s in states])
    proj, tie, cands = project_to_liveness(lset, v, v_limit, return_candidates=True)
    if tie:
        if ordering is None:
            raise TieError(f"liveness projection of {v} is tied and no ordering was given")
        prio = ordering.ranked() if hasattr(ordering, "ranked") else list(ordering)
        proj = choose_by_priority(cands, prio)
    return proj, headings


def human_relaxation_delta(v_robot: float, v_human: float, nu: float,
                           cfg: LivenessConfig | None = None, v_limit: float = math.inf) -> float:
    """Robot-only speed change restoring liveness when the other party is a human.

    Slower robot: slow down by nu / cos(psi). Faster robot: speed up by
    nu / sin(psi), capped by the remaining actuator headroom.
    """
    cfg = cfg or LivenessConfig()
    if nu < 0:
        raise ValueError("projection distance must be >= 0")
    if nu == 0:
        return 0.0
    psi = cfg.psi
    if v_robot < v_human:
        return -nu / math.cos(psi)
    return min(nu / math.sin(psi), v_limit - v_robot)


def required_slowdown_factor(l: float, d: float, eps: float, v: float) -> float:
    """Speed ratio that lets a body of length l clear a crossing at distance d."""
    if d <= 0 or v <= 0:
        raise ValueError("d and v must be > 0")
    return (1.0 + l / d) * (1.0 - eps / v)

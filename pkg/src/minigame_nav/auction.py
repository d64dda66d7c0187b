"""Priority orderings for conflict zones via a sealed-bid position auction.

Each agent bids for a turn; the highest bid moves first. The winner of slot q
pays the bids of the agents it displaces, weighted by the reward gaps
``alpha_j - alpha_{j+1}``. With this rule bidding one's true incentive is a
dominant strategy, which :func:`verify_truthfulness` checks numerically.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AuctionConfig:
    rewards: tuple | None = None
    k: int = 2
    proxy_seed: int = 0

    def __post_init__(self):
        if self.rewards is None:
            object.__setattr__(self, "rewards", tuple(1.0 / q for q in range(1, self.k + 1)))
        r = np.asarray(self.rewards, dtype=float)
        object.__setattr__(self, "rewards", tuple(float(a) for a in r))
        object.__setattr__(self, "k", len(r))
        if np.any(np.diff(r) >= 0) or r[-1] < 0:
            raise ValueError("rewards must be strictly decreasing and nonnegative")

    def alpha(self, q: int) -> float:
        """Reward of slot q (1-based); zero beyond the last slot."""
        return self.rewards[q - 1] if 1 <= q <= len(self.rewards) else 0.0

    def proxy_bids(self, n: int, draw: int = 0) -> np.ndarray:
        rng = np.random.default_rng([self.proxy_seed, draw])
        return rng.uniform(0.0, 1.0, size=n)


@dataclass(frozen=True)
class PriorityOrdering:
    """``permutation[i]`` is the 1-based turn of agent i."""
    permutation: tuple = field(default_factory=tuple)

    def __post_init__(self):
        perm = tuple(int(p) for p in self.permutation)
        if sorted(perm) != list(range(1, len(perm) + 1)):
            raise ValueError(f"not a permutation of turns: {perm}")
        object.__setattr__(self, "permutation", perm)

    def ranked(self) -> list[int]:
        """Agent indices from first turn to last (sigma inverse)."""
        return sorted(range(len(self.permutation)), key=lambda i: self.permutation[i])

    def turn(self, agent: int) -> int:
        return self.permutation[agent]


def allocate(bids, cfg: AuctionConfig | None = None) -> PriorityOrdering:
    """Highest bid gets turn 1; equal bids go to the lower agent index."""
    b = np.asarray(bids, dtype=float)
    if b.size < 1:
        raise ValueError("need at least one bid")
    order = sorted(range(b.size), key=lambda i: (-b[i], i))
    perm = [0] * b.size
    for turn, agent in enumerate(order, start=1):
        perm[agent] = turn
    return PriorityOrdering(tuple(perm))


def payment(q: int, slot_bids, cfg: AuctionConfig) -> float:
    """Price of slot q given the bids sitting in each slot (index 0 = slot 1).

    ``sum_{j=q}^{k} b_{slot j+1} (alpha_j - alpha_{j+1})`` with missing slots
    bidding zero and ``alpha_{k+1} = 0``.
    """
    sb = np.asarray(slot_bids, dtype=float)
    k = max(len(cfg.rewards), sb.size)
    if not 1 <= q <= k:
        raise ValueError(f"slot {q} outside [1, {k}]")
    total = 0.0
    for j in range(q, k + 1):
        nxt = sb[j] if j < sb.size else 0.0
        total += nxt * (cfg.alpha(j) - cfg.alpha(j + 1))
    return float(total)


def optimal_bid(incentive: float) -> float:
    """Truthful bidding is dominant, so the optimal bid is the incentive itself."""
    if not 0.0 <= incentive <= 1.0:
        raise ValueError("incentive must lie in [0, 1]")
    return float(incentive)


def bidder_utility(bid: float, incentive: float, proxies, cfg: AuctionConfig) -> float:
    """Utility ``incentive * alpha_slot - payment`` of agent 0 bidding against proxies."""
    bids = np.concatenate([[bid], np.asarray(proxies, dtype=float)])
    order = allocate(bids, cfg)
    q = order.turn(0)
    slot_bids = bids[order.ranked()]
    return incentive * cfg.alpha(q) - payment(q, slot_bids, cfg)


def verify_truthfulness(incentive: float, k: int = 3, n_grid: int = 101, n_draws: int = 50,
                        cfg: AuctionConfig | None = None) -> dict:
    """Monte-Carlo bid sweep.

    Mean utility is evaluated for ``n_grid`` bids in [0, 1] over ``n_draws``
    sets of ``k - 1`` proxy bids. ``within_one_step`` reports whether the
    empirical maximisers include a grid point within one step of the incentive.
    """
    cfg = cfg or AuctionConfig(k=k)
    grid = np.linspace(0.0, 1.0, n_grid)
    step = grid[1] - grid[0]
    draws = [cfg.proxy_bids(k - 1, d) for d in range(n_draws)]
    mean_u = np.array([np.mean([bidder_utility(b, incentive, px, cfg) for px in draws])
                       for b in grid])
    best = mean_u.max()
    argmax = grid[mean_u >= best - 1e-12]
    nearest = float(argmax[np.argmin(np.abs(argmax - incentive))])
    return {
        "grid": grid,
        "mean_utility": mean_u,
        "argmax": argmax,
        "nearest_argmax": nearest,
        "truthful_utility": float(np.mean([bidder_utility(incentive, incentive, px, cfg)
                                           for px in draws])),
        "within_one_step": abs(nearest - incentive) <= step + 1e-12,
    }

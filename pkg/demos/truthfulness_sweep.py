"""Bid sweep for the priority auction.

For each incentive the mean utility is evaluated over a grid of bids against
seeded proxy bidders. The best bid lands on the incentive itself, so bidding
truthfully is the dominant strategy.

    python demos/truthfulness_sweep.py --agents 3
"""
import argparse

import numpy as np

from minigame_nav.auction import verify_truthfulness


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--agents", type=int, default=3)
    ap.add_argument("--draws", type=int, default=50)
    args = ap.parse_args()

    for incentive in np.linspace(0.1, 0.9, 9):
        res = verify_truthfulness(float(incentive), k=args.agents, n_draws=args.draws)
        bar = "#" * int(round(40 * res["nearest_argmax"]))
        print(f"incentive {incentive:.1f}  best bid {res['nearest_argmax']:.2f}  "
              f"utility {res['truthful_utility']:.4f}  {bar}")


if __name__ == "__main__":
    main()

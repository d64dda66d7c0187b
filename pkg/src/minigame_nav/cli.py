"""Command-line entry point: ``run``, ``compare`` and ``validate``.

Exit status 0 on success, 1 when a simulation run fails, 2 on usage or
configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import io
from .experiments import (RunManifest, UsageError, compare_strategies, parse_strategy,
                          run_experiment)
from .scenarios import ScenarioError, conflict_window

EXIT_OK, EXIT_RUN, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="minigame-nav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate one strategy over several seeds")
    r.add_argument("--scenario", required=True, help="scenario .cfg path or bundled name")
    r.add_argument("--strategy", required=True)
    r.add_argument("--seeds", default="1", help="count (0..n-1) or comma list")
    r.add_argument("--out", required=True)
    r.add_argument("--plots", action="store_true", help="write SVG speed/liveness traces")

    c = sub.add_parser("compare", help="tabulate several strategies on one scenario")
    c.add_argument("--scenario", required=True)
    c.add_argument("--strategies", required=True, help="comma-separated strategy names")
    c.add_argument("--seeds", default="1")
    c.add_argument("--out", required=True)

    v = sub.add_parser("validate", help="parse and check a scenario file")
    v.add_argument("--scenario", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            sc = io.load_scenario(args.scenario)
            window, pair = conflict_window(sc)
            print(f"ok: {sc.name or sc.kind}, {len(sc.agents)} agents, arena "
                  f"{sc.arena[0]:g} x {sc.arena[1]:g}, {len(sc.wall_obstacles)} wall circles, "
                  f"conflict window {window:.2f} s")
            return EXIT_OK
        if args.command == "run":
            manifest = RunManifest(args.scenario, parse_strategy(args.strategy), args.seeds,
                                   args.out, args.plots)
            status = run_experiment(manifest)
            summary = io.read_json(manifest.out / "summary.json")
            dr, cr = summary.get("deadlock_rate"), summary.get("collision_rate")
            if dr and cr:
                print(f"{manifest.strategy.value}: {summary['n_runs']} runs, collision rate "
                      f"{cr['mean']:.2f}, deadlock rate {dr['mean']:.2f} -> {manifest.out}")
            if status:
                print(f"failed seeds: {summary['failed_seeds']}", file=sys.stderr)
            return status
        status, table, _ = compare_strategies(args.scenario, args.strategies, args.seeds, args.out)
        print(table, end="")
        return status
    except (UsageError, ScenarioError, io.ParseError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

"""Multi-seed experiment driver: per-seed artifacts, summaries, strategy tables."""
from __future__ import annotations

import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .scenarios import ScenarioSpec
from .simulator import SimConfig, Strategy, run

log = logging.getLogger(__name__)

STRATEGY_ALIASES = {
    "liveness": "liveness_perturbation",
    "random": "random_perturbation",
    "mpc": "mpc_cbf_only",
}
SUMMARY_FIELDS = ("collision_rate", "deadlock_rate", "mean_avg_delta_v", "mean_path_deviation",
                  "makespan_ratio", "specific_flow_rate", "mean_stop_time", "success_rate")


class UsageError(ValueError):
    """Bad command-line or manifest input (exit status 2)."""


def valid_strategies() -> list[str]:
    return [s.value for s in Strategy] + sorted(STRATEGY_ALIASES)


def parse_strategy(name: str) -> Strategy:
    key = STRATEGY_ALIASES.get(name.strip(), name.strip())
    try:
        return Strategy(key)
    except ValueError:
        raise UsageError(f"unknown strategy {name!r}; valid: {', '.join(valid_strategies())}") \
            from None


def parse_seeds(text) -> list[int]:
    """``"5"`` -> seeds 0..4; ``"1,4,9"`` -> those seeds."""
    if isinstance(text, int):
        seeds = list(range(text))
    elif isinstance(text, (list, tuple)):
        seeds = [int(s) for s in text]
    else:
        t = str(text).strip()
        try:
            seeds = [int(s) for s in t.split(",")] if "," in t else list(range(int(t)))
        except ValueError:
            raise UsageError(f"seeds must be a count or a comma list, got {text!r}") from None
    if not seeds:
        raise UsageError("need at least one seed")
    if any(s < 0 for s in seeds):
        raise UsageError("seeds must be >= 0")
    return seeds


def worker_count(n_jobs: int) -> int:
    env = os.environ.get("MINIGAME_NAV_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise UsageError(f"MINIGAME_NAV_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, n_jobs))


@dataclass
class RunManifest:
    scenario: str | Path | ScenarioSpec
    strategy: str | Strategy
    seeds: list = field(default_factory=lambda: [0])
    out: str | Path = "out"
    plots: bool = False
    sim_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.strategy = self.strategy if isinstance(self.strategy, Strategy) \
            else parse_strategy(self.strategy)
        self.seeds = parse_seeds(self.seeds)
        self.out = Path(self.out)

    def load(self) -> ScenarioSpec:
        if isinstance(self.scenario, ScenarioSpec):
            return self.scenario
        return io.load_scenario(self.scenario)

    def prepare_out(self):
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise UsageError(f"cannot create output directory {self.out}: {e}") from None
        if not os.access(self.out, os.W_OK):
            raise UsageError(f"output directory {self.out} is not writable")


def _run_one(args):
    scenario, strategy, seed, out, plots, overrides = args
    try:
        cfg = SimConfig(strategy=strategy, seed=seed, **overrides)
        traj, metrics = run(scenario, cfg)
        io.write_trajectory_csv(traj, Path(out) / f"trajectory_{seed}.csv")
        md = metrics.to_dict()
        md.update(seed=seed, strategy=cfg.strategy.value, scenario=scenario.name or scenario.kind,
                  terminated=traj.terminated)
        io.write_json(md, Path(out) / f"metrics_{seed}.json")
        if plots:
            from .plots import write_trace_svg
            write_trace_svg(traj, cfg.liveness.ell_thresh, Path(out) / f"trace_{seed}.svg",
                            title=f"{scenario.name or scenario.kind} / {cfg.strategy.value} / seed {seed}")
        return seed, io.read_json(Path(out) / f"metrics_{seed}.json"), None
    except Exception:  # reported per seed by the coordinator
        return seed, None, traceback.format_exc()


def run_scalars(m: dict) -> dict:
    """Per-run scalars that enter the summary, from a metrics dict."""
    def num(x):
        return math.nan if x is None else float(x)
    return {
        "collision_rate": num(m["collision_rate"]),
        "deadlock_rate": num(m["deadlock_rate"]),
        "mean_avg_delta_v": num(m["mean_avg_delta_v"]),
        "mean_path_deviation": num(m["mean_path_deviation"]),
        "makespan_ratio": num(m["makespan_ratio"]),
        "specific_flow_rate": num(m["specific_flow_rate"]),
        "mean_stop_time": num(m["mean_stop_time"]),
        "success_rate": float(np.mean(m["success"])),
    }


def summarize(per_seed: list[dict]) -> dict:
    """Mean and population std of every summary field (NaN runs skipped)."""
    rows = [run_scalars(m) for m in per_seed]
    out = {"n_runs": len(rows)}
    for key in SUMMARY_FIELDS:
        vals = np.array([r[key] for r in rows])
        ok = vals[np.isfinite(vals)]
        out[key] = {"mean": float(ok.mean()) if ok.size else None,
                    "std": float(ok.std()) if ok.size else None,
                    "n": int(ok.size)}
    return out


def run_experiment(manifest: RunManifest) -> int:
    """Run every seed, write per-seed files and ``summary.json``; return exit status."""
    scenario = manifest.load()
    manifest.prepare_out()
    jobs = [(scenario, manifest.strategy.value, s, str(manifest.out), manifest.plots,
             manifest.sim_overrides) for s in manifest.seeds]
    n_workers = worker_count(len(jobs))
    if n_workers == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_one, jobs))
    failures = [(s, err) for s, _, err in results if err is not None]
    metrics = [m for _, m, err in results if err is None]
    for s, err in failures:
        log.error("seed %d failed:\n%s", s, err)
    summary = {"scenario": scenario.name or scenario.kind, "strategy": manifest.strategy.value,
               "seeds": manifest.seeds, "failed_seeds": [s for s, _ in failures]}
    if metrics:
        summary.update(summarize(metrics))
    io.write_json(summary, manifest.out / "summary.json")
    return 1 if failures else 0


def _pm(stat, scale=1.0, digits=3):
    if stat["mean"] is None:
        return "n/a"
    return f"{stat['mean'] * scale:.{digits}f} ± {stat['std'] * scale:.{digits}f}"


def comparison_table(summaries: dict) -> str:
    header = ("| Strategy | CR (%) | DR (%) | Avg. ΔV (m/s) | Path dev. (m) | Makespan ratio |\n"
              "|---|---|---|---|---|---|")
    lines = [header]
    for name, s in summaries.items():
        lines.append(f"| {name} | {_pm(s['collision_rate'], 100, 1)} | "
                     f"{_pm(s['deadlock_rate'], 100, 1)} | {_pm(s['mean_avg_delta_v'], 1, 4)} | "
                     f"{_pm(s['mean_path_deviation'], 1, 3)} | {_pm(s['makespan_ratio'], 1, 3)} |")
    return "\n".join(lines) + "\n"


def compare_strategies(scenario, strategies, seeds, out, sim_overrides=None):
    """Run each strategy into ``out/<strategy>/``; returns ``(status, table, summaries)``."""
    names = [s.strip() for s in (strategies.split(",") if isinstance(strategies, str)
                                 else strategies) if str(s).strip()]
    if len(names) < 2:
        raise UsageError("compare needs at least two strategies")
    parsed = [parse_strategy(n) for n in names]
    out = Path(out)
    status, summaries = 0, {}
    for strat in parsed:
        m = RunManifest(scenario, strat, seeds, out / strat.value,
                        sim_overrides=dict(sim_overrides or {}))
        status = max(status, run_experiment(m))
        summaries[strat.value] = io.read_json(m.out / "summary.json")
    table = comparison_table(summaries)
    (out / "comparison.md").write_text(table)
    return status, table, summaries

"""Command-line entry point: ``wavesim <subcommand> [options]``.

Exit status is 0 on success, 2 for usage or configuration errors and 1 for
failures while running. ``WAVESIM_SEED`` and ``WAVESIM_OUTPUT`` supply the
seed and output path when the flags are omitted.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import yaml

from . import analysis, engine, sweep
from .epi import DiseaseParams
from .errors import ConfigurationError, WavesimError
from .interventions import ScenarioLibrary, load_scenario_file
from .population import (LayeredContactNetwork, Population, generate_population, layer_degree_summary,
                         load_population_config)

log = logging.getLogger("wavesim")

POPULATION_FILE = "population.csv"
NETWORK_FILE = "network.csv"


class UsageError(ConfigurationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# --- shared option handling ---------------------------------------------------------------

def _env_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    raw = os.environ.get("WAVESIM_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"WAVESIM_SEED must be an integer, got {raw!r}") from None


def _env_output(args, default: str) -> Path:
    return Path(args.out or os.environ.get("WAVESIM_OUTPUT") or default)


def _workers(args) -> int:
    return max(1, args.workers or os.cpu_count() or 1)


def _load_population(args) -> tuple[Population, LayeredContactNetwork]:
    if getattr(args, "population", None):
        d = Path(args.population)
        try:
            return Population.read_csv(d / POPULATION_FILE), LayeredContactNetwork.read(d / NETWORK_FILE)
        except OSError as exc:
            raise ConfigurationError(f"cannot read population from {d}: {exc}") from exc
    overrides = {}
    if getattr(args, "n_agents", None):
        overrides["n_agents"] = args.n_agents
    cfg = load_population_config(getattr(args, "pop_config", None), **overrides)
    log.info("generating %d agents (seed %d)", cfg.n_agents, cfg.rng_seed)
    return generate_population(cfg)


def _parse_levels(items) -> dict[str, str]:
    levels = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"lever level {item!r} must look like lever=level")
        k, v = item.split("=", 1)
        levels[k.strip()] = v.strip()
    return levels


def _disease(args, library: ScenarioLibrary) -> DiseaseParams:
    params = DiseaseParams(**library.disease_overrides(args.calibration))
    if getattr(args, "beta", None) is not None:
        params = params.with_(base_transmission_rate=args.beta)
    return params


def _write_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


# --- subcommands -------------------------------------------------------------------------------

def cmd_gen_pop(args) -> int:
    pop, net = _load_population(args)
    out = _env_output(args, "population")
    out.mkdir(parents=True, exist_ok=True)
    pop.write_csv(out / POPULATION_FILE)
    net.write(out / NETWORK_FILE)
    degrees = layer_degree_summary(net)
    print(f"wrote {len(pop)} agents to {out}")
    for layer, stats in degrees.items():
        print(f"  {layer:10s} edges {net.n_edges(layer):8d}  mean degree {stats.mean:6.2f}  max {stats.max}")
    return 0


def cmd_simulate(args) -> int:
    library = ScenarioLibrary.load(args.library)
    if args.scenario:
        scenario = load_scenario_file(args.scenario)
    else:
        scenario = library.scenario(args.calibration, _parse_levels(args.level))
    params = _disease(args, library)
    pop, net = _load_population(args)
    burn_in = engine.default_burn_in(len(pop))
    seed = _env_seed(args)
    out = _env_output(args, "simulation")
    out.mkdir(parents=True, exist_ok=True)
    runs = []
    for rep in range(args.reps):
        series = engine.run_replication(pop, net, scenario, params, burn_in, args.horizon,
                                        seed=engine.replication_seed(seed, rep))
        series.to_csv(out / sweep.rep_filename(rep))
        runs.append(series)
    report = analysis.ReportScenario(scenario.name, {}, {}, tuple(runs))
    _write_rows(out / "mean_series.csv", analysis.series_long([report]))
    cum = analysis.cumulative(runs)
    print(f"{scenario.name}: {args.reps} replications, mean cumulative infections {cum.mean():.1f}, "
          f"max peak infectious {max(r.peak_infectious for r in runs)}; series in {out}")
    return 0


def cmd_calibrate(args) -> int:
    try:
        grid = yaml.safe_load(Path(args.grid).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read calibration grid {args.grid}: {exc}") from exc
    if not isinstance(grid, dict):
        raise ConfigurationError(f"{args.grid}: grid must map parameter names to value lists")
    library = ScenarioLibrary.load(args.library)
    params = DiseaseParams(**library.disease_overrides(args.calibration))
    base = library.scenario(args.calibration)
    pop, net = _load_population(args)
    target = analysis.default_target(len(pop), params, args.horizon)
    results = analysis.calibrate_grid(grid, target, args.reps, _env_seed(args), pop, net,
                                      engine.default_burn_in(len(pop)), params, base, args.horizon,
                                      workers=_workers(args))
    out = _env_output(args, "leaderboard.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    analysis.write_leaderboard(results, out)
    for r in results[:5]:
        print(f"{r.rank:3d}  mse {r.mse:12.1f}  {r.point}")
    print(f"{len(results)} grid points ranked; leaderboard in {out}")
    return 0


def cmd_estimate_r0(args) -> int:
    library = ScenarioLibrary.load(args.library)
    params = _disease(args, library)
    pop, net = _load_population(args)
    est = analysis.estimate_r0(pop, net, params, args.runs, seed=_env_seed(args),
                               workers=_workers(args), detail=True)
    print(f"R0 {est.r0:.3f} at beta {params.base_transmission_rate} "
          f"({est.tertiary} tertiary / {est.secondary} secondary cases over {est.n_runs} index runs)")
    return 0


def cmd_sweep(args) -> int:
    plan = sweep.SweepPlan.read(args.plan)
    changes = {}
    if args.seed is not None or "WAVESIM_SEED" in os.environ:
        changes["master_seed"] = _env_seed(args)
    if args.out or "WAVESIM_OUTPUT" in os.environ:
        changes["output_path"] = str(_env_output(args, plan.output_path))
    if args.reps:
        changes["replications"] = args.reps
    if changes:
        plan = sweep.SweepPlan(**{**plan.__dict__, **changes})
    library = ScenarioLibrary.load(args.library)
    sweep.check_writable(plan.output_path)
    pop, net = _load_population(args)
    result = sweep.execute_sweep(plan, pop, net, engine.default_burn_in(len(pop)), workers=_workers(args),
                                 library=library)
    total = len(result.scenario_ids) * plan.replications
    print(f"{len(result.scenario_ids)} scenarios x {plan.replications} replications: "
          f"{result.completed} run, {result.skipped} already present; results in {result.output_path}")
    return 0 if result.n_runs == total else 1


def cmd_report(args) -> int:
    stored = sweep.read_results(args.results)
    scenarios = [analysis.ReportScenario(sid, s.manifest.get("levels", {}), s.manifest.get("axes", {}), s.runs)
                 for sid, s in stored.items()]
    summaries = analysis.summary_table(scenarios, args.baseline)
    out = _env_output(args, str(Path(args.results) / "report"))
    _write_rows(out / "summary.csv", [s.row() for s in summaries])
    _write_rows(out / "summary_long.csv", analysis.summary_long(summaries))
    _write_rows(out / "series_long.csv", analysis.series_long(scenarios))
    table = analysis.crosstab(scenarios, summaries)
    if table:
        _write_rows(out / "crosstab.csv", table)
    width = max(len(s.scenario_id) for s in summaries)
    print(f"{'scenario':{width}s}  reduction%   95% CI            peak")
    for s, sc in zip(summaries, scenarios):
        lo, hi = s.pct_reduction_ci
        label = ",".join(f"{k}={v}" for k, v in sc.levels.items() if v != "baseline") or "baseline"
        print(f"{s.scenario_id:{width}s}  {s.pct_reduction_mean:9.2f}  [{lo:7.2f}, {hi:7.2f}]  {s.peak_infected:6d}  {label}")
    print(f"tables in {out}")
    return 0


# --- parser ------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wavesim", description="Agent-based Omicron-wave policy simulator.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    sub.required = True

    def common(sp, population=True, seed=True, out=True, workers=False):
        if population:
            sp.add_argument("--population", help=f"directory with {POPULATION_FILE} and {NETWORK_FILE}")
            sp.add_argument("--pop-config", help="population YAML used when --population is not given")
            sp.add_argument("--n-agents", type=int, help="override the configured number of agents")
        if seed:
            sp.add_argument("--seed", type=int, help="master seed (env WAVESIM_SEED)")
        if out:
            sp.add_argument("--out", help="output path (env WAVESIM_OUTPUT)")
        if workers:
            sp.add_argument("--workers", type=int, help="worker processes (default: all CPUs)")

    def library(sp):
        sp.add_argument("--library", help="scenario library YAML (default: bundled)")
        sp.add_argument("--calibration", default="best_fit", help="calibrated baseline (default best_fit)")

    sp = sub.add_parser("gen-pop", help="generate a population and its contact layers")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_gen_pop)

    sp = sub.add_parser("simulate", help="run replications of one scenario")
    common(sp)
    library(sp)
    sp.add_argument("--level", action="append", help="lever=level, repeatable (e.g. mask_wearing=++)")
    sp.add_argument("--scenario", help="flat YAML scenario file instead of library levels")
    sp.add_argument("--beta", type=float, help="override the base transmission rate")
    sp.add_argument("--reps", type=int, default=1)
    sp.add_argument("--horizon", type=int, default=engine.DEFAULT_HORIZON)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("calibrate", help="grid-search disease and policy parameters")
    common(sp, workers=True)
    library(sp)
    sp.add_argument("--grid", required=True, help="YAML mapping parameter -> list of values")
    sp.add_argument("--reps", type=int, default=20, help="replications per grid point")
    sp.add_argument("--horizon", type=int, default=engine.DEFAULT_HORIZON)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("estimate-r0", help="R0 from index-case runs")
    common(sp, out=False, workers=True)
    library(sp)
    sp.add_argument("--beta", type=float, help="base transmission rate (default: calibration value)")
    sp.add_argument("--runs", type=int, default=1000, help="index-case runs")
    sp.set_defaults(func=cmd_estimate_r0)

    sp = sub.add_parser("sweep", help="run a policy sweep plan")
    common(sp, workers=True)
    sp.add_argument("--library", help="scenario library YAML (default: bundled)")
    sp.add_argument("--plan", required=True, help="sweep plan YAML")
    sp.add_argument("--reps", type=int, help="override the plan's replications")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="summary tables from a sweep results directory")
    sp.add_argument("results", help="sweep output directory")
    sp.add_argument("--baseline", help="baseline scenario id (default: all-baseline scenario per axes)")
    sp.add_argument("--out", help="directory for the tables (env WAVESIM_OUTPUT)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"wavesim: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"wavesim: configuration error: {exc}", file=sys.stderr)
        return 2
    except (WavesimError, ArithmeticError, OSError, ValueError) as exc:
        print(f"wavesim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

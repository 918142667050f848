"""Calibration scoring, grid search, R0 estimation and scenario summaries."""
from __future__ import annotations

import csv
import datetime as dt
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from . import engine
from .engine import BurnInSpec, CaseSeries, RunTimeSeries, replication_seed
from .epi import DiseaseParams
from .errors import ConfigurationError, UndefinedEstimateError
from .interventions import PolicyScenario
from .population import LayeredContactNetwork, Population

Z95 = 1.959963984540054


@dataclass(frozen=True)
class CalibrationTarget:
    target_series: np.ndarray
    comparison_window: tuple[int, int]   # half-open [start, stop)

    def __post_init__(self):
        t = np.asarray(self.target_series, dtype=float)
        object.__setattr__(self, "target_series", t)
        lo, hi = self.comparison_window
        if np.any(t < 0):
            raise ConfigurationError("target counts must be >= 0")
        if not 0 <= lo < hi <= len(t):
            raise ConfigurationError(f"window {self.comparison_window} outside target of length {len(t)}")

    @property
    def peak_day(self) -> int:
        return int(np.argmax(self.target_series))


def infectious_prevalence(infections: np.ndarray, params: DiseaseParams) -> np.ndarray:
    """Infectious count implied by a daily infection series.

    ``infections`` starts ``params.course_length`` days before the first
    output day; an agent exposed on day s is infectious on days
    s + latent .. s + latent + duration - 1.
    """
    L = params.latent_duration
    D = params.presymptomatic_duration + params.infectious_duration
    Da = params.asymptomatic_days
    lead = params.course_length
    n_out = len(infections) - lead
    f = params.asymptomatic_fraction
    out = np.zeros(n_out)
    for t in range(n_out):
        day = t + lead
        out[t] = ((1 - f) * infections[day - np.arange(L, L + D)].sum()
                  + f * infections[day - np.arange(L, L + Da)].sum())
    return out


def default_target(n_agents: int, params: DiseaseParams, horizon: int = engine.DEFAULT_HORIZON, *,
                   undercount: float = engine.DEFAULT_UNDERCOUNT, report_lag: int = 6,
                   cases: CaseSeries | None = None) -> CalibrationTarget:
    """Infectious-agent target for days 0..horizon built from the bundled case fixture."""
    cases = cases or CaseSeries.read_csv()
    lead = params.course_length
    inf = cases.infections(engine.START_DATE - dt.timedelta(days=lead), horizon + 1 + lead, n_agents,
                           undercount=undercount, report_lag=report_lag)
    return CalibrationTarget(infectious_prevalence(inf, params), (0, horizon + 1))


def target_infections(n_agents: int, horizon: int = engine.DEFAULT_HORIZON, **kwargs) -> np.ndarray:
    """New infections on days 0..horizon-1 implied by the case fixture."""
    cases = kwargs.pop("cases", None) or CaseSeries.read_csv()
    return cases.infections(engine.START_DATE, horizon, n_agents, **kwargs)


def _series_values(series) -> np.ndarray:
    if isinstance(series, RunTimeSeries):
        return series["infectious"].astype(float)
    return np.asarray(series, dtype=float)


def mean_series(runs: Sequence[RunTimeSeries], column: str = "infectious") -> np.ndarray:
    return np.mean([r[column] for r in runs], axis=0)


def mse_score(series, target: CalibrationTarget) -> float:
    """Mean squared difference of infectious counts over the target window.

    ``series`` is a RunTimeSeries, a list of them (their mean is used), or a
    plain array of counts.
    """
    if isinstance(series, (list, tuple)) and series and isinstance(series[0], RunTimeSeries):
        values = mean_series(series)
    else:
        values = _series_values(series)
    lo, hi = target.comparison_window
    if hi > len(values):
        raise ConfigurationError(f"window {target.comparison_window} exceeds series of length {len(values)}")
    d = values[lo:hi] - target.target_series[lo:hi]
    return float(np.mean(d * d))


# --- grid search -------------------------------------------------------------------

_DISEASE_FIELDS = {f.name for f in fields(DiseaseParams)}
_POLICY_FIELDS = {f.name for f in fields(PolicyScenario)}
ALIASES = {"remote_work": "work_distancing", "school_closure": "school_distancing"}


def split_point(point: dict) -> tuple[dict, dict]:
    disease, policy = {}, {}
    for key, value in point.items():
        key = ALIASES.get(key, key)
        if key in _DISEASE_FIELDS:
            disease[key] = value
        elif key in _POLICY_FIELDS:
            policy[key] = value
        else:
            raise ConfigurationError(f"unknown calibration parameter {key!r}")
    return disease, policy


def expand_grid(search_space: dict[str, Sequence]) -> list[dict]:
    if not search_space or any(len(v) == 0 for v in search_space.values()):
        raise ConfigurationError("calibration grid is empty")
    keys = list(search_space)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(search_space[k] for k in keys))]


@dataclass(frozen=True)
class GridResult:
    rank: int
    point: dict
    mse: float
    mean_series: np.ndarray


def _evaluate_point(args) -> tuple[float, np.ndarray]:
    pop, net, params, scenario, burn_in, horizon, seed, index, reps, target = args
    runs = [engine.run_replication(pop, net, scenario, params, burn_in, horizon,
                                   seed=replication_seed(seed, index, r)) for r in range(reps)]
    m = mean_series(runs)
    return mse_score(m, target), m


def calibrate_grid(search_space: dict[str, Sequence], target: CalibrationTarget, reps_per_point: int,
                   seed: int, pop: Population, net: LayeredContactNetwork, burn_in: BurnInSpec | None,
                   base_params: DiseaseParams | None = None, base_scenario: PolicyScenario | None = None,
                   horizon: int | None = None, workers: int = 1) -> list[GridResult]:
    """Rank every grid point by the MSE of its replication-mean infectious series.

    Replication r of grid point i uses the seed stream (seed, i, r), so the
    leaderboard does not depend on ``workers``.
    """
    grid = expand_grid(search_space)
    base_params = base_params or DiseaseParams()
    base_scenario = base_scenario or PolicyScenario()
    horizon = target.comparison_window[1] - 1 if horizon is None else horizon
    jobs = []
    for i, point in enumerate(grid):
        d, p = split_point(point)
        jobs.append((pop, net, base_params.with_(**d), base_scenario.with_(**p), burn_in, horizon,
                     seed, i, reps_per_point, target))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            scored = list(ex.map(_evaluate_point, jobs))
    else:
        scored = [_evaluate_point(j) for j in jobs]
    order = sorted(range(len(grid)), key=lambda i: (scored[i][0], i))
    return [GridResult(rank + 1, grid[i], scored[i][0], scored[i][1]) for rank, i in enumerate(order)]


def write_leaderboard(results: Sequence[GridResult], path: str | os.PathLike) -> None:
    keys = sorted({k for r in results for k in r.point})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", *keys, "mse"])
        for r in results:
            w.writerow([r.rank, *(r.point.get(k, "") for k in keys), f"{r.mse:.6g}"])


# --- R0 ------------------------------------------------------------------------------

@dataclass(frozen=True)
class R0Estimate:
    r0: float
    secondary: int
    tertiary: int
    n_runs: int


def index_case_generations(pop: Population, net: LayeredContactNetwork, params: DiseaseParams,
                           seed, max_days: int = 200) -> tuple[int, int]:
    """(secondary, tertiary) case counts from one index agent in a fully
    susceptible, intervention-free population."""
    st = engine.initialize(pop, net, PolicyScenario.no_interventions(), None, params, seed)
    st.max_generation = 1
    engine.seed_index_case(st)
    from .epi import S, R
    for _ in range(max_days):
        active = (st.generation >= 0) & (st.generation <= 1)
        live = active & (st.epi.state != S) & (st.epi.state != R)
        if not live.any():
            break
        engine.step_day(st)
    gen = st.generation
    return int((gen == 1).sum()), int((gen == 2).sum())


def _r0_chunk(args):
    pop, net, params, seed, runs = args
    return [index_case_generations(pop, net, params, replication_seed(seed, "r0", r)) for r in runs]


def estimate_r0(pop: Population, net: LayeredContactNetwork, params: DiseaseParams, n_index_runs: int,
                seed: int = 0, workers: int = 1, detail: bool = False):
    """Pooled ratio of tertiary to secondary cases over independent index-agent runs."""
    if n_index_runs < 1:
        raise ConfigurationError("n_index_runs must be >= 1")
    runs = list(range(n_index_runs))
    if workers > 1:
        chunks = [runs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_r0_chunk, [(pop, net, params, seed, c) for c in chunks]))
        counts = sorted((r, c) for chunk, res in zip(chunks, parts) for r, c in zip(chunk, res))
        counts = [c for _, c in counts]
    else:
        counts = _r0_chunk((pop, net, params, seed, runs))
    secondary = sum(c[0] for c in counts)
    tertiary = sum(c[1] for c in counts)
    if secondary == 0:
        raise UndefinedEstimateError(f"no secondary cases in {n_index_runs} index runs; R0 undefined")
    est = R0Estimate(tertiary / secondary, secondary, tertiary, n_index_runs)
    return est if detail else est.r0


# --- scenario summaries ------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSummary:
    scenario_id: str
    mean_cumulative_infections: float
    pct_reduction_mean: float
    pct_reduction_ci: tuple[float, float]
    peak_infected: int
    n_replications: int

    def row(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "mean_cumulative_infections": f"{self.mean_cumulative_infections:.3f}",
            "pct_reduction_mean": f"{self.pct_reduction_mean:.4f}",
            "pct_reduction_ci_low": f"{self.pct_reduction_ci[0]:.4f}",
            "pct_reduction_ci_high": f"{self.pct_reduction_ci[1]:.4f}",
            "peak_infected": self.peak_infected,
            "n_replications": self.n_replications,
        }


def cumulative(runs: Sequence[RunTimeSeries]) -> np.ndarray:
    return np.array([r.cumulative_infections for r in runs], dtype=float)


def summarize_scenarios(baseline_runs: Sequence[RunTimeSeries], scenario_runs: Sequence[RunTimeSeries],
                        scenario_id: str = "scenario", ci: str = "normal", n_boot: int = 2000,
                        seed: int = 0) -> ScenarioSummary:
    """Percentage reduction in cumulative infections against the baseline mean.

    The 95% CI is a normal approximation over scenario replications by
    default; ``ci="bootstrap"`` resamples both run sets instead and reports
    the 2.5/97.5 percentiles.
    """
    if len(baseline_runs) < 2 or len(scenario_runs) < 2:
        raise ConfigurationError("need at least 2 replications of baseline and scenario")
    if ci not in ("normal", "bootstrap"):
        raise ConfigurationError(f"unknown CI method {ci!r}")
    base = cumulative(baseline_runs)
    cum = cumulative(scenario_runs)
    base_mean = base.mean()
    if base_mean == 0:
        raise UndefinedEstimateError("baseline has zero cumulative infections; reduction undefined")
    mean = 100.0 * (1.0 - cum.mean() / base_mean)
    if ci == "normal":
        per_run = 100.0 * (base_mean - cum) / base_mean
        half = Z95 * per_run.std(ddof=1) / np.sqrt(len(per_run))
        interval = (float(mean - half), float(mean + half))
    else:
        rng = np.random.default_rng(seed)
        b = base[rng.integers(0, len(base), (n_boot, len(base)))].mean(axis=1)
        s = cum[rng.integers(0, len(cum), (n_boot, len(cum)))].mean(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            boot = 100.0 * (1.0 - s / b)
        lo, hi = np.nanpercentile(boot, [2.5, 97.5])
        interval = (float(min(lo, mean)), float(max(hi, mean)))
    peak = max(r.peak_infectious for r in scenario_runs)
    return ScenarioSummary(scenario_id, float(cum.mean()), float(mean), interval, int(peak), len(scenario_runs))


# --- report tables -----------------------------------------------------------------------

@dataclass(frozen=True)
class ReportScenario:
    """What the report needs from one stored scenario."""

    scenario_id: str
    levels: dict[str, str]
    axes: dict
    runs: tuple[RunTimeSeries, ...]

    @property
    def is_baseline(self) -> bool:
        return all(v == "baseline" for v in self.levels.values())


def find_baselines(scenarios: Sequence[ReportScenario], baseline_id: str | None = None) -> dict[str, str]:
    """Map each scenario id to the id of the baseline it is compared with.

    With ``baseline_id`` every scenario uses it. Otherwise each scenario is
    compared with the all-baseline scenario sharing its epidemiological axes.
    """
    ids = {s.scenario_id for s in scenarios}
    if baseline_id is not None:
        if baseline_id not in ids:
            raise ConfigurationError(f"baseline scenario {baseline_id!r} not found in results")
        return {s.scenario_id: baseline_id for s in scenarios}
    by_axes = {}
    for s in scenarios:
        if s.is_baseline:
            by_axes[_axes_key(s.axes)] = s.scenario_id
    out = {}
    for s in scenarios:
        key = _axes_key(s.axes)
        if key not in by_axes:
            raise ConfigurationError(f"no all-baseline scenario for axes {dict(key) or '{}'}; "
                                     "pass the baseline scenario id explicitly")
        out[s.scenario_id] = by_axes[key]
    return out


def _axes_key(axes: dict) -> tuple:
    return tuple(sorted((k, float(v)) for k, v in axes.items()))


def summary_table(scenarios: Sequence[ReportScenario], baseline_id: str | None = None) -> list[ScenarioSummary]:
    baselines = find_baselines(scenarios, baseline_id)
    runs = {s.scenario_id: s.runs for s in scenarios}
    return [summarize_scenarios(runs[baselines[s.scenario_id]], s.runs, s.scenario_id) for s in scenarios]


def summary_long(summaries: Sequence[ScenarioSummary]) -> list[dict]:
    """Long format: one row per (scenario, metric)."""
    rows = []
    for s in summaries:
        lo, hi = s.pct_reduction_ci
        rows.append({"scenario_id": s.scenario_id, "metric": "pct_reduction_cumulative",
                     "value": s.pct_reduction_mean, "ci_low": lo, "ci_high": hi})
        rows.append({"scenario_id": s.scenario_id, "metric": "mean_cumulative_infections",
                     "value": s.mean_cumulative_infections, "ci_low": "", "ci_high": ""})
        rows.append({"scenario_id": s.scenario_id, "metric": "peak_infected",
                     "value": s.peak_infected, "ci_low": "", "ci_high": ""})
    return rows


def series_long(scenarios: Sequence[ReportScenario], column: str = "infectious") -> list[dict]:
    """Per-day replication mean of ``column`` with a normal 95% band."""
    rows = []
    for s in scenarios:
        data = np.array([r[column] for r in s.runs], dtype=float)
        mean = data.mean(axis=0)
        half = Z95 * data.std(axis=0, ddof=1) / np.sqrt(len(data)) if len(data) > 1 else np.zeros_like(mean)
        for day, (m, h) in enumerate(zip(mean, half)):
            rows.append({"scenario_id": s.scenario_id, "day": day, "metric": column,
                         "value": m, "ci_low": m - h, "ci_high": h + m})
    return rows


CROSSTAB_ROWS = ("vaccination", "boosting")
CROSSTAB_COLUMNS = ("testing", "testing_pcr", "testing_antigen", "mask_wearing", "mask_efficacy")


def crosstab(scenarios: Sequence[ReportScenario], summaries: Sequence[ScenarioSummary]) -> list[dict]:
    """Mean reductions laid out with vaccination/boosting levels as rows and
    testing/masking levels as columns, for the levers that are present.

    Scenarios that move any other lever off baseline are left out, as are
    scenarios away from the first epidemiological-axes combination.
    """
    if not scenarios:
        return []
    present = set().union(*(s.levels for s in scenarios))
    row_levers = [k for k in CROSSTAB_ROWS if k in present]
    col_levers = [k for k in CROSSTAB_COLUMNS if k in present]
    if not row_levers and not col_levers:
        return []
    others = present - set(row_levers) - set(col_levers)
    axes0 = _axes_key(scenarios[0].axes)
    value = {s.scenario_id: s.pct_reduction_mean for s in summaries}
    cells: dict[str, dict[str, float]] = {}
    columns: list[str] = []
    for s in scenarios:
        if _axes_key(s.axes) != axes0 or any(s.levels.get(k, "baseline") != "baseline" for k in others):
            continue
        r = "|".join(f"{k}={s.levels.get(k, 'baseline')}" for k in row_levers) or "all"
        c = "|".join(f"{k}={s.levels.get(k, 'baseline')}" for k in col_levers) or "all"
        if c not in columns:
            columns.append(c)
        cells.setdefault(r, {})[c] = value[s.scenario_id]
    return [{"row": r, **{c: cells[r].get(c, "") for c in columns}} for r in cells]

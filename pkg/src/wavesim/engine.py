"""One replication: burn-in initialisation, then the daily loop.

Within a day the passes run in a fixed order: vaccine waning, dose rollout,
testing, tracing/quarantine, transmission over the effective network, disease
advancement, quarantine countdown.
"""
from __future__ import annotations

import csv
import functools
import hashlib
import datetime as dt
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import interventions as iv
from .epi import (A, E, P, R, S, Y, DiseaseParams, EpiArrays, VaccineWaningTable,
                  advance_states, apply_vaccine_waning_arrays, draw_infectivity, draw_symptomatic,
                  is_infectious, pair_probability, resolve_immune_escape_arrays)
from .errors import ConfigurationError
from .population import LAYER_CODE, LayeredContactNetwork, Population

DATA_DIR = Path(__file__).parent / "data"
HOME = LAYER_CODE["home"]
START_DATE = dt.date(2021, 12, 29)
DEFAULT_HORIZON = 61
DEFAULT_UNDERCOUNT = 4.0


# --- input series -------------------------------------------------------------------

@dataclass(frozen=True)
class CaseSeries:
    """Daily reported national cases (7-day average) by calendar date."""

    dates: tuple[dt.date, ...]
    cases: np.ndarray

    @classmethod
    def read_csv(cls, path: str | os.PathLike | None = None) -> "CaseSeries":
        path = Path(path) if path is not None else DATA_DIR / "us_cases.csv"
        dates, vals = [], []
        try:
            with open(path, newline="") as fh:
                for r in csv.DictReader(line for line in fh if not line.startswith("#")):
                    dates.append(dt.date.fromisoformat(r["date"]))
                    vals.append(float(r["cases"]))
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigurationError(f"cannot read case series {path}: {exc}") from exc
        if not dates:
            raise ConfigurationError(f"{path}: empty case series")
        if any((b - a).days != 1 for a, b in zip(dates, dates[1:])):
            raise ConfigurationError(f"{path}: dates must be consecutive days")
        return cls(tuple(dates), np.array(vals))

    def infections(self, first: dt.date, n_days: int, n_agents: int, *,
                   undercount: float = DEFAULT_UNDERCOUNT, report_lag: int = 6,
                   national_population: float = iv.US_POPULATION) -> np.ndarray:
        """Simulation-scale new infections on ``first`` .. ``first + n_days - 1``.

        An infection on day t is reported on day t + ``report_lag``.
        """
        start = (first - self.dates[0]).days + report_lag
        if start < 0 or start + n_days > len(self.cases):
            raise ConfigurationError(
                f"case series {self.dates[0]}..{self.dates[-1]} does not cover "
                f"{first} + {n_days} days with report lag {report_lag}")
        return self.cases[start:start + n_days] * undercount * n_agents / national_population


def read_vaccination_series(path: str | os.PathLike | None = None,
                            day0: dt.date = START_DATE) -> iv.VaccinationSeries:
    """Columns ``date,bracket,primary_doses,booster_doses``; dates before ``day0``."""
    path = Path(path) if path is not None else DATA_DIR / "us_vaccinations.csv"
    rows: dict[str, dict[int, tuple[float, float]]] = {}
    try:
        with open(path, newline="") as fh:
            for r in csv.DictReader(line for line in fh if not line.startswith("#")):
                d = (dt.date.fromisoformat(r["date"]) - day0).days
                if d >= 0:
                    continue
                rows.setdefault(r["bracket"], {})[d] = (float(r["primary_doses"]), float(r["booster_doses"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigurationError(f"cannot read vaccination series {path}: {exc}") from exc
    if not rows:
        return iv.VaccinationSeries.empty()
    first = min(min(v) for v in rows.values())
    days = np.arange(first, 0)
    prim, boost = {}, {}
    for bracket, by_day in rows.items():
        prim[bracket] = np.array([by_day.get(int(d), (0.0, 0.0))[0] for d in days])
        boost[bracket] = np.array([by_day.get(int(d), (0.0, 0.0))[1] for d in days])
    return iv.VaccinationSeries(days, prim, boost)


@dataclass(frozen=True)
class BurnInSpec:
    """Pre-start history. ``incidence[i]`` is the number of new infections on
    day ``i - len(incidence)`` (the last entry is day -1)."""

    incidence: np.ndarray = field(default_factory=lambda: np.zeros(0))
    prior_infected_fraction: float = 0.0
    vaccination_series: iv.VaccinationSeries = field(default_factory=iv.VaccinationSeries.empty)
    start_date_label: str = ""
    prior_recovery_days: tuple[int, int] = (60, 540)

    def __post_init__(self):
        inc = np.asarray(self.incidence, dtype=float)
        object.__setattr__(self, "incidence", inc)
        if np.any(inc < 0) or np.any(~np.isfinite(inc)):
            raise ConfigurationError("incidence values must be finite and >= 0")
        if not 0.0 <= self.prior_infected_fraction <= 1.0:
            raise ConfigurationError("prior_infected_fraction must be in [0, 1]")

    @classmethod
    def from_days(cls, n_days: int, infections: dict[int, float], **kwargs) -> "BurnInSpec":
        """Build from ``{day_offset: count}`` with negative offsets."""
        inc = np.zeros(n_days)
        for d, k in infections.items():
            if not -n_days <= d < 0:
                raise ConfigurationError(f"burn-in day {d} outside [-{n_days}, -1]")
            inc[n_days + d] = k
        return cls(inc, **kwargs)


def default_burn_in(n_agents: int, n_days: int = 30, *, prior_infected_fraction: float = 0.56,
                    undercount: float = DEFAULT_UNDERCOUNT, report_lag: int = 6,
                    cases: CaseSeries | None = None) -> BurnInSpec:
    """Burn-in from the bundled case and vaccination fixtures, starting 2021-12-29."""
    cases = cases or CaseSeries.read_csv()
    inc = cases.infections(START_DATE - dt.timedelta(days=n_days), n_days, n_agents,
                           undercount=undercount, report_lag=report_lag)
    return BurnInSpec(inc, prior_infected_fraction, read_vaccination_series(),
                      START_DATE.isoformat())


# --- state --------------------------------------------------------------------------

SERIES_COLUMNS = ("day", "susceptible", "exposed", "presymptomatic", "symptomatic", "asymptomatic",
                  "infectious", "recovered", "quarantined", "new_infections", "tests_used", "positives",
                  "traced")


@dataclass
class RunTimeSeries:
    """Per-day counts; row t is the state after t simulated days."""

    columns: dict[str, np.ndarray]

    def __getitem__(self, key: str) -> np.ndarray:
        return self.columns[key]

    def __len__(self) -> int:
        return len(self.columns["day"])

    @property
    def infected(self) -> np.ndarray:
        return self["exposed"] + self["infectious"]

    @property
    def cumulative_infections(self) -> int:
        return int(self["new_infections"].sum())

    @property
    def peak_infectious(self) -> int:
        return int(self["infectious"].max())

    def equals(self, other: "RunTimeSeries") -> bool:
        return all(np.array_equal(self.columns[k], other.columns[k]) for k in SERIES_COLUMNS)

    def to_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_COLUMNS)
            for i in range(len(self)):
                w.writerow([int(self.columns[k][i]) for k in SERIES_COLUMNS])

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "RunTimeSeries":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls({k: np.array([int(r[k]) for r in rows], dtype=np.int64) for k in SERIES_COLUMNS})


class SimulationState:
    """All mutable per-replication state plus its RNG stream."""

    def __init__(self, pop: Population, net: LayeredContactNetwork, scenario: iv.PolicyScenario,
                 params: DiseaseParams, rng: np.random.Generator,
                 waning_table: VaccineWaningTable | None = None,
                 vaccination_series: iv.VaccinationSeries | None = None):
        n = net.n_agents
        if len(pop) != n:
            raise ConfigurationError(f"population has {len(pop)} agents, network {n}")
        self.n_agents = n
        self.day = 0
        self.pop = pop
        self.ages = pop.age
        self.brackets = iv.bracket_of(pop.age)
        self.scenario = scenario
        self.params = params
        self.rng = rng
        self.graph = iv.graph_for(net)
        self.entry_active = np.ones(len(self.graph.indices), dtype=bool)
        self.waning_table = waning_table
        self.vaccination_series = vaccination_series
        self.epi = EpiArrays.susceptible(n)
        self.masked = np.zeros(n, dtype=bool)
        self.adherent = np.zeros(n, dtype=bool)
        self.quarantined = np.zeros(n, dtype=bool)
        self.quarantine_days = np.zeros(n, dtype=np.int32)
        self.last_positive_day = np.full(n, np.iinfo(np.int32).min // 2, dtype=np.int64)
        self.generation = np.full(n, -1, dtype=np.int64)
        self.infector = np.full(n, -1, dtype=np.int64)
        self.transitions: set[tuple[int, int]] = set()
        self.event_log: list[dict] = []
        self.max_generation: int | None = None

    def quarantine_state(self, agent: int) -> iv.QuarantineState:
        return iv.QuarantineState(bool(self.quarantined[agent]), int(self.quarantine_days[agent]),
                                  bool(self.adherent[agent]))

    def counts(self) -> np.ndarray:
        return self.epi.counts()

    def snapshot(self, new_infections=0, tests=0, positives=0, traced=0) -> dict:
        c = self.counts()
        return {
            "day": self.day, "susceptible": c[S], "exposed": c[E], "presymptomatic": c[P],
            "symptomatic": c[Y], "asymptomatic": c[A], "infectious": c[P] + c[Y] + c[A],
            "recovered": c[R], "quarantined": int(self.quarantined.sum()),
            "new_infections": new_infections, "tests_used": tests, "positives": positives,
            "traced": traced,
        }


def _replay_course(elapsed: np.ndarray, symptomatic: np.ndarray, params: DiseaseParams):
    """Deterministic state and days-in-state after ``elapsed`` days since exposure."""
    L, Pd, I = params.latent_duration, params.presymptomatic_duration, params.infectious_duration
    Ad = params.asymptomatic_days
    state = np.full(len(elapsed), E, dtype=np.int8)
    days = elapsed.astype(np.int32).copy()
    after = elapsed - L
    sym, asy = symptomatic, ~symptomatic
    m = (after >= 0) & sym & (after < Pd)
    state[m], days[m] = P, after[m]
    m = (after >= Pd) & sym & (after < Pd + I)
    state[m], days[m] = Y, after[m] - Pd
    m = (after >= Pd + I) & sym
    state[m], days[m] = R, after[m] - Pd - I
    m = (after >= 0) & asy & (after < Ad)
    state[m], days[m] = A, after[m]
    m = (after >= Ad) & asy
    state[m], days[m] = R, after[m] - Ad
    return state, days


@functools.lru_cache(maxsize=1)
def default_waning_table() -> VaccineWaningTable:
    return VaccineWaningTable.read_csv()


def initialize(pop: Population, net: LayeredContactNetwork, scenario: iv.PolicyScenario,
               burn_in: BurnInSpec | None, params: DiseaseParams, seed,
               waning_table: VaccineWaningTable | None = None) -> SimulationState:
    rng = np.random.default_rng(seed)
    burn_in = burn_in or BurnInSpec()
    if waning_table is None:
        waning_table = default_waning_table()
    st = SimulationState(pop, net, scenario, params, rng, waning_table, burn_in.vaccination_series)
    n = st.n_agents
    epi = st.epi
    epi.infectivity = draw_infectivity(n, params, rng)
    epi.symptomatic = draw_symptomatic(n, params, rng)

    # prior-variant immunity, thinned by immune escape
    if burn_in.prior_infected_fraction > 0:
        prior = np.flatnonzero(rng.random(n) < burn_in.prior_infected_fraction)
        resolve_immune_escape_arrays(epi, prior, params, rng, burn_in.prior_recovery_days)

    # replay of the pre-start incidence series
    inc = burn_in.incidence
    if inc.sum() > 0:
        if len(inc) < params.course_length:
            raise ConfigurationError(
                f"burn-in covers {len(inc)} days, shorter than one disease course ({params.course_length})")
        whole = np.floor(inc).astype(np.int64)
        counts = whole + (rng.random(len(inc)) < inc - whole)
        total = int(counts.sum())
        if total > n:
            raise ConfigurationError(f"burn-in incidence totals {total} infections for {n} agents")
        pool = np.flatnonzero(epi.state == S)
        if total > len(pool):
            raise ConfigurationError(f"burn-in needs {total} susceptible agents, only {len(pool)} available")
        chosen = rng.choice(pool, size=total, replace=False)
        day_of = np.repeat(np.arange(-len(inc), 0), counts)
        state, days = _replay_course(-day_of, epi.symptomatic[chosen], params)
        epi.state[chosen] = state
        epi.days_in_state[chosen] = days
        st.generation[chosen] = 0

    iv.apply_coverage_targets(epi, pop.age, scenario, burn_in.vaccination_series, waning_table, rng)

    st.masked = iv.assign_masks(n, scenario, rng)
    st.adherent = rng.random(n) < scenario.quarantine_adherence
    keep = iv.distancing_edge_masks(net, pop, scenario, rng)
    if not all(k.all() for k in keep.values()):
        edge_keep = np.concatenate([keep[name] for name in LAYER_CODE])
        st.entry_active = edge_keep[st.graph.entry_edge]

    # symptomatic agents already isolating at day 0
    if scenario.self_quarantine_on_symptoms:
        onset = np.flatnonzero(epi.state == Y)
        onset = onset[rng.random(len(onset)) < scenario.quarantine_adherence]
        left = scenario.quarantine_days_symptomatic - epi.days_in_state[onset]
        ok = left > 0
        st.quarantined[onset[ok]] = True
        st.quarantine_days[onset[ok]] = left[ok]
    return st


def seed_index_case(st: SimulationState, agent: int | None = None) -> int:
    """Expose one agent at day 0 as generation 0 of a fresh outbreak."""
    if agent is None:
        agent = int(st.rng.integers(st.n_agents))
    st.epi.state[agent] = E
    st.epi.days_in_state[agent] = 0
    st.generation[agent] = 0
    return agent


def transmit(st: SimulationState) -> tuple[np.ndarray, np.ndarray]:
    """Synchronous transmission over the effective network.

    Every (infectious, susceptible) contact is an independent Bernoulli trial;
    a susceptible hit by several contacts is infected once, by one of them
    chosen uniformly. Returns ``(infected, infectors)``.
    """
    epi = st.epi
    infectious = is_infectious(epi.state)
    if st.max_generation is not None:
        infectious &= (st.generation >= 0) & (st.generation <= st.max_generation)
    src_agents = np.flatnonzero(infectious)
    z = np.zeros(0, dtype=np.int64)
    if len(src_agents) == 0:
        return z, z
    src, dst, entries = st.graph.gather(src_agents, st.entry_active)
    ok = epi.state[dst] == S
    if st.quarantined.any():
        q = st.quarantined[src] | st.quarantined[dst]
        if not st.scenario.quarantine_suppresses_home:
            q &= st.graph.entry_layer[entries] != HOME
        ok &= ~q
    src, dst = src[ok], dst[ok]
    if len(src) == 0:
        return z, z
    sc = st.scenario
    stage = st.params.stage_multipliers()
    if sc.mask_wearing_fraction > 0:
        out_f = np.where(st.masked[src], 1.0 - sc.mask_transmission_efficacy, 1.0)
        in_f = np.where(st.masked[dst], 1.0 - sc.mask_infection_efficacy, 1.0)
    else:
        out_f = in_f = 1.0
    p = pair_probability(st.params.base_transmission_rate, epi.infectivity[src], stage[epi.state[src]],
                         out_f, in_f, epi.infection_protection[dst], epi.transmission_reduction[src])
    hit = np.flatnonzero(st.rng.random(len(p)) < p)
    if len(hit) == 0:
        return z, z
    hit = hit[st.rng.permutation(len(hit))]
    targets, first = np.unique(dst[hit], return_index=True)
    return targets, src[hit[first]]


def step_day(st: SimulationState, scenario: iv.PolicyScenario | None = None,
             params: DiseaseParams | None = None) -> SimulationState:
    if scenario is not None:
        st.scenario = scenario
    if params is not None:
        st.params = params
    sc, rng, epi = st.scenario, st.rng, st.epi

    if st.day % 7 == 0 and st.waning_table is not None:
        apply_vaccine_waning_arrays(epi, st.waning_table)
    iv.rollout_doses(st, sc, st.day, rng)

    batch = iv.allocate_tests_arrays(st, sc, rng)
    positives = batch.agents[batch.result]
    traced = np.zeros(0, dtype=np.int64)
    if len(positives):
        traced, _ = iv.process_positives(st, positives, sc, rng)

    infected, infectors = transmit(st)
    if len(infected):
        epi.state[infected] = E
        epi.days_in_state[infected] = 0
        epi.symptomatic[infected] = draw_symptomatic(len(infected), st.params, rng)
        st.generation[infected] = np.where(st.generation[infectors] >= 0, st.generation[infectors] + 1, -1)
        st.infector[infected] = infectors
        st.transitions.add((S, E))
    # newly exposed agents start their clock at day 0 and advance with everyone else
    moved, frm, to = advance_states(epi, st.params, rng)
    if len(moved):
        st.transitions.update(zip(frm.tolist(), to.tolist()))
        if sc.self_quarantine_on_symptoms:
            iv.self_quarantine(st, moved[to == Y], sc, rng)

    q = st.quarantined
    st.quarantine_days[q] -= 1
    released = q & (st.quarantine_days <= 0)
    st.quarantined[released] = False
    st.quarantine_days[released] = 0
    epi.days_since_dose[epi.vaccinated] += 1

    st.day += 1
    st.event_log.append(st.snapshot(len(infected), len(batch), len(positives), len(traced)))
    return st


def run_replication(pop: Population, net: LayeredContactNetwork, scenario: iv.PolicyScenario,
                    params: DiseaseParams, burn_in: BurnInSpec | None, horizon: int = DEFAULT_HORIZON,
                    seed=0, waning_table: VaccineWaningTable | None = None,
                    state_out: list | None = None) -> RunTimeSeries:
    if horizon < 0:
        raise ConfigurationError("horizon must be >= 0")
    st = initialize(pop, net, scenario, burn_in, params, seed, waning_table)
    rows = [st.snapshot()]
    for _ in range(horizon):
        step_day(st)
        rows.append(st.event_log[-1])
    if state_out is not None:
        state_out.append(st)
    return RunTimeSeries({k: np.array([r[k] for r in rows], dtype=np.int64) for k in SERIES_COLUMNS})


def replication_seed(master_seed: int, *keys) -> np.random.SeedSequence:
    """Independent stream keyed by (master_seed, *keys); keys may be ints or strings.

    Strings enter as the four 32-bit words of their SHA-256 prefix, so any
    string length is accepted and distinct keys give distinct streams.
    """
    entropy = [int(master_seed)]
    for k in keys:
        if isinstance(k, str):
            digest = hashlib.sha256(k.encode()).digest()
            entropy.extend(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))
        else:
            entropy.append(int(k))
    return np.random.SeedSequence(entropy)

"""Policy levers: testing, tracing and quarantine, masks, distancing, vaccination.

Intervention passes operate on a :class:`wavesim.engine.SimulationState` and
mutate it in place. The scenario library (``data/scenarios.yaml``) maps the
named lever levels (baseline, ``+``, ``++``) onto :class:`PolicyScenario`
fields.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import yaml

from .epi import Y, EpiArrays, VaccineWaningTable, is_infectious
from .errors import ConfigurationError, QueryError
from .population import LAYER_CODE, LayeredContactNetwork, Population

if TYPE_CHECKING:
    from .engine import SimulationState

DATA_DIR = Path(__file__).parent / "data"
US_POPULATION = 331_000_000

AGE_BRACKETS = {"0-4": (0, 4), "5-11": (5, 11), "12-17": (12, 17), "18+": (18, 200)}
BOOSTER_GAP_DAYS = 180
FULL_DOSES = 2
BOOSTED_DOSES = 3


def _default_coverage():
    return {"0-4": 0.0, "5-11": 0.15, "12-17": 0.54, "18+": 0.73}


@dataclass(frozen=True)
class PolicyScenario:
    name: str = "baseline"
    vaccination_coverage: dict = field(default_factory=_default_coverage)
    booster_coverage: float = 0.2
    booster_min_age: int = 18
    rollout_multiplier: float = 1.0
    max_in_run_coverage: float = 0.95
    pcr_tests_per_day: float = 1.9e6
    antigen_tests_per_day: float = 20e6
    pcr_false_negative: float = 0.05
    antigen_false_negative: float = 0.25
    pcr_false_positive: float = 0.005
    antigen_false_positive: float = 0.005
    trace_capacity_per_day: float = 250
    trace_capacity_is_national: bool = False
    national_population: float = US_POPULATION
    mask_wearing_fraction: float = 0.41
    mask_infection_efficacy: float = 0.40
    mask_transmission_efficacy: float = 0.60
    work_distancing: float = 0.10
    school_distancing: float = 0.0
    community_distancing: float = 0.20
    quarantine_adherence: float = 0.60
    quarantine_days_symptomatic: int = 10
    quarantine_days_asymptomatic: int = 5
    quarantine_suppresses_home: bool = False
    self_quarantine_on_symptoms: bool = True
    positive_lookback_days: int = 5

    _PROBABILITIES = (
        "booster_coverage", "pcr_false_negative", "antigen_false_negative", "pcr_false_positive",
        "antigen_false_positive", "mask_wearing_fraction", "mask_infection_efficacy",
        "mask_transmission_efficacy", "work_distancing", "school_distancing",
        "community_distancing", "quarantine_adherence", "max_in_run_coverage",
    )
    _COUNTS = ("pcr_tests_per_day", "antigen_tests_per_day", "trace_capacity_per_day",
               "rollout_multiplier", "quarantine_days_symptomatic", "quarantine_days_asymptomatic",
               "positive_lookback_days")

    def __post_init__(self):
        for name in self._PROBABILITIES:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")
        for name in self._COUNTS:
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        unknown = set(self.vaccination_coverage) - set(AGE_BRACKETS)
        if unknown:
            raise ConfigurationError(f"unknown age brackets {sorted(unknown)}")
        for k, v in self.vaccination_coverage.items():
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"vaccination coverage for {k} must be in [0, 1]")
        if self.national_population <= 0:
            raise ConfigurationError("national_population must be positive")

    @classmethod
    def no_interventions(cls, name: str = "no_interventions") -> "PolicyScenario":
        return cls(name=name, vaccination_coverage={k: 0.0 for k in AGE_BRACKETS},
                   booster_coverage=0.0, rollout_multiplier=0.0, pcr_tests_per_day=0,
                   antigen_tests_per_day=0, trace_capacity_per_day=0, mask_wearing_fraction=0.0,
                   work_distancing=0.0, school_distancing=0.0, community_distancing=0.0,
                   quarantine_adherence=0.0, self_quarantine_on_symptoms=False)

    def with_(self, **changes) -> "PolicyScenario":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyScenario":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown scenario keys {sorted(unknown)}")
        return cls(**d)

    def scaled(self, national_count: float, n_agents: int) -> int:
        return int(round(national_count * n_agents / self.national_population))

    def daily_pcr(self, n_agents: int) -> int:
        return self.scaled(self.pcr_tests_per_day, n_agents)

    def daily_antigen(self, n_agents: int) -> int:
        return self.scaled(self.antigen_tests_per_day, n_agents)

    def daily_traces(self, n_agents: int) -> int:
        if self.trace_capacity_is_national:
            return self.scaled(self.trace_capacity_per_day, n_agents)
        return int(round(self.trace_capacity_per_day))


def scaled_capacity(national_count: float, n_agents: int, national_population: float = US_POPULATION) -> int:
    """National daily count expressed at simulation scale."""
    return int(round(national_count * n_agents / national_population))


# --- scenario library ------------------------------------------------------------

@dataclass(frozen=True)
class LeverLevel:
    set: dict
    scale: dict


@dataclass
class ScenarioLibrary:
    """Calibrated baselines plus named lever levels that modify them."""

    calibrations: dict[str, tuple[dict, dict]]          # name -> (disease overrides, policy overrides)
    levers: dict[str, dict[str, LeverLevel]]

    @classmethod
    def load(cls, path: str | os.PathLike | None = None) -> "ScenarioLibrary":
        path = Path(path) if path is not None else DATA_DIR / "scenarios.yaml"
        try:
            raw = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read scenario library {path}: {exc}") from exc
        cals = {}
        for name, spec in (raw.get("calibrations") or {}).items():
            cals[name] = (dict(spec.get("disease") or {}), dict(spec.get("policy") or {}))
        levers = {}
        for lever, levels in (raw.get("levers") or {}).items():
            levers[lever] = {}
            for level, spec in levels.items():
                spec = spec or {}
                extra = set(spec) - {"set", "scale"}
                if extra:
                    raise ConfigurationError(f"lever {lever}/{level}: unknown keys {sorted(extra)}")
                levers[lever][str(level)] = LeverLevel(dict(spec.get("set") or {}), dict(spec.get("scale") or {}))
        if not cals:
            raise ConfigurationError(f"{path}: no calibrations defined")
        return cls(cals, levers)

    def calibration(self, name: str) -> tuple[dict, dict]:
        if name not in self.calibrations:
            raise QueryError(f"unknown calibration {name!r}; known: {sorted(self.calibrations)}")
        return self.calibrations[name]

    def level(self, lever: str, level: str) -> LeverLevel:
        if lever not in self.levers:
            raise ConfigurationError(f"unknown lever {lever!r}; known: {sorted(self.levers)}")
        if level not in self.levers[lever]:
            raise ConfigurationError(f"unknown level {level!r} for lever {lever!r}; "
                                     f"known: {sorted(self.levers[lever])}")
        return self.levers[lever][level]

    def scenario(self, calibration: str = "best_fit", levels: dict[str, str] | None = None,
                 name: str | None = None, base: PolicyScenario | None = None) -> PolicyScenario:
        """Resolve a calibration baseline plus lever levels into a PolicyScenario."""
        _, policy = self.calibration(calibration)
        d = (base or PolicyScenario()).to_dict()
        d.update(policy)
        baseline = dict(d)
        touched: dict[str, str] = {}
        for lever, level in sorted((levels or {}).items()):
            spec = self.level(lever, level)
            for key in list(spec.set) + list(spec.scale):
                if key in touched and touched[key] != lever:
                    raise ConfigurationError(f"levers {touched[key]!r} and {lever!r} both set {key!r}")
                touched[key] = lever
            for key, value in spec.set.items():
                if key == "vaccination_coverage":
                    d[key] = {**baseline[key], **value}
                else:
                    d[key] = value
            for key, factor in spec.scale.items():
                v = baseline[key] * factor
                d[key] = min(v, 1.0) if key in PolicyScenario._PROBABILITIES else v
        if name is None:
            name = calibration if not levels else calibration + ":" + ",".join(
                f"{k}={v}" for k, v in sorted(levels.items()))
        d["name"] = name
        return PolicyScenario.from_dict(d)

    def disease_overrides(self, calibration: str) -> dict:
        return dict(self.calibration(calibration)[0])


def load_scenario_file(path: str | os.PathLike) -> PolicyScenario:
    """Read a flat key-value YAML scenario."""
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read scenario {path}: {exc}") from exc
    return PolicyScenario.from_dict(raw)


# --- contact graph helpers --------------------------------------------------------

class ContactGraph:
    """CSR adjacency over all layers with per-entry layer codes.

    ``active`` marks directed entries that survive distancing; it starts all
    True and is replaced per replication.
    """

    def __init__(self, net: LayeredContactNetwork):
        self.n_agents = net.n_agents
        edge_list, layer_list = [], []
        for name, code in LAYER_CODE.items():
            e = net.edges(name)
            edge_list.append(e)
            layer_list.append(np.full(len(e), code, dtype=np.int8))
        self.edges = np.concatenate(edge_list) if edge_list else np.zeros((0, 2), dtype=np.int64)
        self.edge_layer = np.concatenate(layer_list)
        m = len(self.edges)
        src = np.concatenate((self.edges[:, 0], self.edges[:, 1]))
        dst = np.concatenate((self.edges[:, 1], self.edges[:, 0]))
        eid = np.concatenate((np.arange(m), np.arange(m)))
        order = np.argsort(src, kind="stable")
        self.indices = dst[order].astype(np.int64)
        self.entry_edge = eid[order]
        self.entry_layer = self.edge_layer[self.entry_edge]
        counts = np.bincount(src, minlength=self.n_agents)
        self.indptr = np.concatenate(([0], np.cumsum(counts)))
        self.layer_slices = {}
        start = 0
        for name, e in zip(LAYER_CODE, edge_list):
            self.layer_slices[name] = slice(start, start + len(e))
            start += len(e)

    def gather(self, agents: np.ndarray, entry_active: np.ndarray | None = None):
        """Directed entries leaving ``agents``: (source, neighbour, entry index)."""
        agents = np.asarray(agents, dtype=np.int64)
        starts = self.indptr[agents]
        counts = self.indptr[agents + 1] - starts
        total = int(counts.sum())
        if total == 0:
            z = np.zeros(0, dtype=np.int64)
            return z, z, z
        offsets = np.cumsum(counts) - counts
        entries = np.arange(total) - np.repeat(offsets - starts, counts)
        src = np.repeat(agents, counts)
        if entry_active is not None:
            keep = entry_active[entries]
            entries, src = entries[keep], src[keep]
        return src, self.indices[entries], entries


def graph_for(net: LayeredContactNetwork) -> ContactGraph:
    g = getattr(net, "_graph", None)
    if g is None:
        g = ContactGraph(net)
        net._graph = g
    return g


# --- masks and distancing --------------------------------------------------------

def assign_masks(n_agents: int, scenario: PolicyScenario, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask-wearing trait, fixed for the whole replication."""
    return rng.random(n_agents) < scenario.mask_wearing_fraction


def _choose_fraction(candidates: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    k = int(round(fraction * len(candidates)))
    if k == 0:
        return np.zeros(0, dtype=np.int64)
    return rng.choice(candidates, size=k, replace=False)


def distancing_edge_masks(net: LayeredContactNetwork, pop: Population, scenario: PolicyScenario,
                          rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Per-layer boolean keep-masks over edges after distancing."""
    keep = {name: np.ones(net.n_edges(name), dtype=bool) for name in LAYER_CODE}
    n = net.n_agents
    for layer, site, frac in (("work", pop.workplace_id, scenario.work_distancing),
                              ("school", pop.school_id, scenario.school_distancing)):
        if frac <= 0:
            continue
        removed = np.zeros(n, dtype=bool)
        removed[_choose_fraction(np.flatnonzero(site >= 0), frac, rng)] = True
        e = net.edges(layer)
        keep[layer] = ~(removed[e[:, 0]] | removed[e[:, 1]])
    if scenario.community_distancing > 0:
        m = net.n_edges("community")
        drop = _choose_fraction(np.arange(m), scenario.community_distancing, rng)
        keep["community"][drop] = False
    return keep


def apply_distancing(net: LayeredContactNetwork, pop: Population, scenario: PolicyScenario,
                     rng: np.random.Generator) -> LayeredContactNetwork:
    """Effective network after remote work, school closure and community distancing."""
    keep = distancing_edge_masks(net, pop, scenario, rng)
    return LayeredContactNetwork(net.n_agents, {k: net.edges(k)[keep[k]] for k in LAYER_CODE})


# --- testing, tracing and quarantine ---------------------------------------------

class TestType(Enum):
    PCR = "PCR"
    ANTIGEN = "Antigen"

    __test__ = False


@dataclass(frozen=True)
class TestOutcome:
    agent_id: int
    test_type: TestType
    day: int
    result: bool

    __test__ = False


@dataclass(frozen=True)
class QuarantineState:
    quarantined: bool = False
    days_remaining: int = 0
    adherent: bool = False


@dataclass
class TestBatch:
    agents: np.ndarray
    antigen: np.ndarray    # True for antigen, False for PCR
    result: np.ndarray

    def __len__(self):
        return len(self.agents)

    @property
    def n_pcr(self) -> int:
        return int((~self.antigen).sum())

    @property
    def n_antigen(self) -> int:
        return int(self.antigen.sum())


def _sample(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if k >= len(pool):
        return pool
    if k <= 0:
        return pool[:0]
    return rng.choice(pool, size=k, replace=False)


def _results(state: "SimulationState", agents: np.ndarray, fn: float, fp: float,
             rng: np.random.Generator) -> np.ndarray:
    infected = is_infectious(state.epi.state[agents])
    u = rng.random(len(agents))
    return np.where(infected, u >= fn, u < fp)


def recent_positive_contacts(state: "SimulationState", lookback: int) -> np.ndarray:
    recent = np.flatnonzero(state.last_positive_day >= state.day - lookback)
    if len(recent) == 0:
        return recent
    _, nbr, _ = state.graph.gather(recent, state.entry_active)
    return np.unique(nbr)


def allocate_tests_arrays(state: "SimulationState", scenario: PolicyScenario,
                          rng: np.random.Generator) -> TestBatch:
    """PCR to symptomatic agents first, antigen to recent-positive contacts
    first; leftover capacity of each type goes to random eligible agents.

    Positives from the PCR round count as recent positives for antigen
    prioritisation on the same day.
    """
    n = state.n_agents
    eligible = ~state.quarantined
    chunks_a, chunks_t, chunks_r = [], [], []

    cap = scenario.daily_pcr(n)
    if cap > 0:
        symp = np.flatnonzero(eligible & (state.epi.state == Y))
        first = _sample(symp, cap, rng)
        rest = cap - len(first)
        if rest > 0:
            others = np.flatnonzero(eligible & (state.epi.state != Y))
            first = np.concatenate((first, _sample(others, rest, rng)))
        res = _results(state, first, scenario.pcr_false_negative, scenario.pcr_false_positive, rng)
        state.last_positive_day[first[res]] = state.day
        chunks_a.append(first)
        chunks_t.append(np.zeros(len(first), dtype=bool))
        chunks_r.append(res)

    cap = scenario.daily_antigen(n)
    if cap > 0:
        contacts = recent_positive_contacts(state, scenario.positive_lookback_days)
        contacts = contacts[eligible[contacts]]
        first = _sample(contacts, cap, rng)
        rest = cap - len(first)
        if rest > 0:
            pool = eligible.copy()
            pool[first] = False
            first = np.concatenate((first, _sample(np.flatnonzero(pool), rest, rng)))
        res = _results(state, first, scenario.antigen_false_negative, scenario.antigen_false_positive, rng)
        state.last_positive_day[first[res]] = state.day
        chunks_a.append(first)
        chunks_t.append(np.ones(len(first), dtype=bool))
        chunks_r.append(res)

    if not chunks_a:
        z = np.zeros(0, dtype=np.int64)
        return TestBatch(z, z.astype(bool), z.astype(bool))
    return TestBatch(np.concatenate(chunks_a), np.concatenate(chunks_t), np.concatenate(chunks_r))


def allocate_tests(state: "SimulationState", scenario: PolicyScenario,
                   rng: np.random.Generator) -> list[TestOutcome]:
    batch = allocate_tests_arrays(state, scenario, rng)
    return [TestOutcome(int(a), TestType.ANTIGEN if t else TestType.PCR, state.day, bool(r))
            for a, t, r in zip(batch.agents, batch.antigen, batch.result)]


def quarantine_agents(state: "SimulationState", agents: np.ndarray, scenario: PolicyScenario) -> np.ndarray:
    """Quarantine the adherent subset of ``agents``; returns who was quarantined."""
    agents = agents[state.adherent[agents]]
    if len(agents) == 0:
        return agents
    days = np.where(state.epi.state[agents] == Y, scenario.quarantine_days_symptomatic,
                    scenario.quarantine_days_asymptomatic)
    state.quarantine_days[agents] = np.maximum(state.quarantine_days[agents], days)
    state.quarantined[agents] = True
    return agents


def self_quarantine(state: "SimulationState", onset: np.ndarray, scenario: PolicyScenario,
                    rng: np.random.Generator) -> np.ndarray:
    """Symptom onset: each agent isolates with probability ``quarantine_adherence``.

    This is a fresh draw per onset, independent of the adherence trait that
    governs compliance with test and trace directives.
    """
    if len(onset) == 0:
        return onset
    agents = onset[rng.random(len(onset)) < scenario.quarantine_adherence]
    state.quarantine_days[agents] = np.maximum(state.quarantine_days[agents],
                                               scenario.quarantine_days_symptomatic)
    state.quarantined[agents] = True
    return agents


def process_positives(state: "SimulationState", positives: np.ndarray, scenario: PolicyScenario,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Quarantine adherent positives and trace their contacts up to capacity.

    Returns ``(traced_contacts, newly_quarantined)``.
    """
    positives = np.unique(positives)
    quarantined = quarantine_agents(state, positives, scenario)
    cap = scenario.daily_traces(state.n_agents)
    traced = np.zeros(0, dtype=np.int64)
    if cap > 0 and len(positives):
        _, nbr, _ = state.graph.gather(positives, state.entry_active)
        queue = np.unique(nbr)
        queue = queue[~state.quarantined[queue]]
        traced = _sample(queue, cap, rng)
        quarantined = np.concatenate((quarantined, quarantine_agents(state, traced, scenario)))
    return traced, quarantined


def process_positive(agent: int, state: "SimulationState", scenario: PolicyScenario,
                     rng: np.random.Generator) -> tuple[QuarantineState, np.ndarray]:
    traced, _ = process_positives(state, np.array([agent]), scenario, rng)
    return state.quarantine_state(agent), traced


# --- vaccination ------------------------------------------------------------------

@dataclass(frozen=True)
class VaccinationSeries:
    """Daily national dose counts by age bracket for days ``days`` (< 0)."""

    days: np.ndarray
    primary: dict[str, np.ndarray]
    booster: dict[str, np.ndarray]

    def __post_init__(self):
        for tab in (self.primary, self.booster):
            for k, v in tab.items():
                if k not in AGE_BRACKETS:
                    raise ConfigurationError(f"unknown age bracket {k!r} in vaccination series")
                if len(v) != len(self.days) or np.any(v < 0):
                    raise ConfigurationError("vaccination series must be non-negative and aligned")

    @classmethod
    def empty(cls) -> "VaccinationSeries":
        return cls(np.zeros(0, dtype=np.int64), {}, {})

    def sample_days(self, bracket: str, k: int, rng: np.random.Generator, booster: bool = False) -> np.ndarray:
        """Dose days (negative offsets) drawn in proportion to daily doses."""
        tab = (self.booster if booster else self.primary).get(bracket)
        if tab is None or tab.sum() <= 0:
            tab = sum((self.booster if booster else self.primary).values(), np.zeros(len(self.days)))
        if len(self.days) == 0 or np.sum(tab) <= 0:
            return np.full(k, -BOOSTER_GAP_DAYS if not booster else -30, dtype=np.int64)
        return rng.choice(self.days, size=k, p=tab / tab.sum())

    def recent_rate(self, window: int = 14) -> tuple[dict[str, float], float]:
        """Mean daily national primary doses per bracket and total boosters
        over the last ``window`` days of the series."""
        prim = {k: float(v[-window:].mean()) if len(v) else 0.0 for k, v in self.primary.items()}
        boost = float(sum(v[-window:].mean() for v in self.booster.values())) if self.booster else 0.0
        return prim, boost


def bracket_of(ages: np.ndarray) -> dict[str, np.ndarray]:
    return {k: (ages >= lo) & (ages <= hi) for k, (lo, hi) in AGE_BRACKETS.items()}


def vaccinate(epi: EpiArrays, agents: np.ndarray, days_since: np.ndarray, table: VaccineWaningTable) -> None:
    epi.vaccinated[agents] = True
    epi.doses[agents] = np.maximum(epi.doses[agents], FULL_DOSES)
    epi.days_since_dose[agents] = days_since
    inf, trans = table.lookup(epi.doses[agents], days_since // 7)
    epi.infection_protection[agents] = inf
    epi.transmission_reduction[agents] = trans


def boost(epi: EpiArrays, agents: np.ndarray, days_since: np.ndarray, table: VaccineWaningTable) -> None:
    epi.boosted[agents] = True
    epi.doses[agents] = np.maximum(epi.doses[agents], BOOSTED_DOSES)
    epi.days_since_dose[agents] = days_since
    inf, trans = table.lookup(epi.doses[agents], days_since // 7)
    epi.infection_protection[agents] = inf
    epi.transmission_reduction[agents] = trans


def apply_coverage_targets(epi: EpiArrays, ages: np.ndarray, scenario: PolicyScenario,
                           series: VaccinationSeries, table: VaccineWaningTable,
                           rng: np.random.Generator) -> None:
    """Top up day-0 vaccination and boosting to the scenario targets.

    Targets below current coverage leave everyone as they are.
    """
    brackets = bracket_of(ages)
    for name, members in brackets.items():
        target = scenario.vaccination_coverage.get(name, 0.0)
        idx = np.flatnonzero(members)
        want = int(round(target * len(idx))) - int(epi.vaccinated[idx].sum())
        if want <= 0:
            continue
        chosen = _sample(idx[~epi.vaccinated[idx]], want, rng)
        days = series.sample_days(name, len(chosen), rng)
        vaccinate(epi, chosen, -days, table)

    eligible = epi.vaccinated & (ages >= scenario.booster_min_age) & (epi.days_since_dose >= BOOSTER_GAP_DAYS)
    eligible |= epi.boosted
    idx = np.flatnonzero(eligible)
    want = int(round(scenario.booster_coverage * len(idx))) - int(epi.boosted[idx].sum())
    if want <= 0:
        return
    chosen = _sample(idx[~epi.boosted[idx]], want, rng)
    for name, members in brackets.items():
        sel = chosen[members[chosen]]
        if len(sel) == 0:
            continue
        bdays = series.sample_days(name, len(sel), rng, booster=True)
        earliest = -epi.days_since_dose[sel] + BOOSTER_GAP_DAYS
        bdays = np.minimum(np.maximum(bdays, earliest), 0)
        boost(epi, sel, -bdays, table)


def _stochastic_round(x: float, rng: np.random.Generator) -> int:
    base = int(np.floor(x))
    return base + int(rng.random() < x - base)


def rollout_doses(state: "SimulationState", scenario: PolicyScenario, day: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """In-run vaccination and boosting at the recent national throughput
    scaled to the simulation and multiplied by ``rollout_multiplier``.

    Returns ``(newly_vaccinated, newly_boosted)``.
    """
    z = np.zeros(0, dtype=np.int64)
    if scenario.rollout_multiplier <= 0 or state.vaccination_series is None:
        return z, z
    epi, n = state.epi, state.n_agents
    prim_rate, boost_rate = state.vaccination_series.recent_rate()
    scale = n / scenario.national_population * scenario.rollout_multiplier
    new_v = []
    for name, members in state.brackets.items():
        if scenario.vaccination_coverage.get(name, 0.0) <= 0:
            continue
        k = _stochastic_round(prim_rate.get(name, 0.0) * scale, rng)
        if k <= 0:
            continue
        idx = np.flatnonzero(members)
        room = int(scenario.max_in_run_coverage * len(idx)) - int(epi.vaccinated[idx].sum())
        k = min(k, room)
        if k <= 0:
            continue
        chosen = _sample(idx[~epi.vaccinated[idx]], k, rng)
        vaccinate(epi, chosen, np.zeros(len(chosen), dtype=np.int64), state.waning_table)
        new_v.append(chosen)
    new_b = z
    k = _stochastic_round(boost_rate * scale, rng)
    if k > 0:
        eligible = (epi.vaccinated & ~epi.boosted & (state.ages >= scenario.booster_min_age)
                    & (epi.days_since_dose >= BOOSTER_GAP_DAYS))
        new_b = _sample(np.flatnonzero(eligible), k, rng)
        boost(epi, new_b, np.zeros(len(new_b), dtype=np.int64), state.waning_table)
    return (np.concatenate(new_v) if new_v else z), new_b

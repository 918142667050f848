"""Disease state machine, individual heterogeneity and immunity.

Everything here works on column arrays (:class:`EpiArrays`) so the engine can
advance the whole population in one call. The per-agent functions
(:func:`infection_probability`, :func:`advance_disease_state`, ...) wrap the
same kernels for single records.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractViolation

DATA_DIR = Path(__file__).parent / "data"


class DiseaseState(IntEnum):
    SUSCEPTIBLE = 0
    EXPOSED = 1
    PRESYMPTOMATIC = 2
    SYMPTOMATIC = 3
    ASYMPTOMATIC = 4
    RECOVERED = 5


S, E, P, Y, A, R = (int(s) for s in DiseaseState)
N_STATES = len(DiseaseState)

LEGAL_TRANSITIONS = frozenset({(S, E), (E, P), (E, A), (P, Y), (Y, R), (A, R), (R, S)})
INFECTIOUS_STATES = (P, Y, A)

_IS_INFECTIOUS = np.zeros(N_STATES, dtype=bool)
_IS_INFECTIOUS[list(INFECTIOUS_STATES)] = True


def is_infectious(state: np.ndarray) -> np.ndarray:
    return _IS_INFECTIOUS[state]


@dataclass(frozen=True, eq=False)
class NaturalWaning:
    """Per-day probability that a recovered agent becomes susceptible again,
    indexed by days since recovery. The last entry is held for later days."""

    hazard: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.hazard, dtype=float)
        if h.ndim != 1 or len(h) == 0 or np.any(h < 0) or np.any(h > 1):
            raise ConfigurationError("waning hazards must be a non-empty 1-d array in [0, 1]")
        object.__setattr__(self, "hazard", h)

    @classmethod
    def delayed_constant(cls, protected_days: int = 90, median_days: float = 270.0) -> "NaturalWaning":
        """Zero hazard for ``protected_days`` then a constant hazard such that
        half of recovered agents are still protected at ``median_days``."""
        if median_days <= protected_days:
            raise ConfigurationError("median protection must exceed the protected window")
        h = 1.0 - 0.5 ** (1.0 / (median_days - protected_days))
        return cls(np.concatenate([np.zeros(protected_days), [h]]))

    @classmethod
    def none(cls) -> "NaturalWaning":
        return cls(np.zeros(1))

    def __call__(self, days: np.ndarray) -> np.ndarray:
        days = np.asarray(days)
        return self.hazard[np.minimum(days, len(self.hazard) - 1)]

    def __eq__(self, other) -> bool:
        return isinstance(other, NaturalWaning) and np.array_equal(self.hazard, other.hazard)

    def __hash__(self) -> int:
        return hash(self.hazard.tobytes())


@dataclass(frozen=True)
class DiseaseParams:
    base_transmission_rate: float = 0.20
    latent_duration: int = 4
    presymptomatic_duration: int = 2
    infectious_duration: int = 5
    asymptomatic_duration: int | None = None   # None: presymptomatic + infectious
    asymptomatic_fraction: float = 0.35
    asymptomatic_infectivity_multiplier: float = 0.75
    presymptomatic_infectivity_multiplier: float = 0.75
    superspreader_shape: float | None = 0.5     # gamma shape, mean 1; None disables
    immune_escape: float = 0.40
    natural_immunity_waning: NaturalWaning = field(default_factory=NaturalWaning.delayed_constant)

    def __post_init__(self):
        for name in ("base_transmission_rate", "asymptomatic_fraction", "immune_escape"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")
        for name in ("asymptomatic_infectivity_multiplier", "presymptomatic_infectivity_multiplier"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1], got {v}")
        for name in ("latent_duration", "presymptomatic_duration", "infectious_duration"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1 day")
        if self.asymptomatic_duration is not None and self.asymptomatic_duration < 1:
            raise ConfigurationError("asymptomatic_duration must be >= 1 day")
        if self.superspreader_shape is not None and self.superspreader_shape <= 0:
            raise ConfigurationError("superspreader_shape must be positive")

    @property
    def asymptomatic_days(self) -> int:
        if self.asymptomatic_duration is not None:
            return int(self.asymptomatic_duration)
        return int(self.presymptomatic_duration + self.infectious_duration)

    @property
    def course_length(self) -> int:
        """Days from exposure to recovery on the longer of the two paths."""
        return int(self.latent_duration + max(self.presymptomatic_duration + self.infectious_duration,
                                              self.asymptomatic_days))

    def stage_multipliers(self) -> np.ndarray:
        m = np.zeros(N_STATES)
        m[P] = self.presymptomatic_infectivity_multiplier
        m[Y] = 1.0
        m[A] = self.asymptomatic_infectivity_multiplier
        return m

    def durations(self) -> np.ndarray:
        """Length of each timed state, indexed by state code (0 = untimed)."""
        d = np.zeros(N_STATES, dtype=np.int64)
        d[E] = self.latent_duration
        d[P] = self.presymptomatic_duration
        d[Y] = self.infectious_duration
        d[A] = self.asymptomatic_days
        return d

    def with_(self, **changes) -> "DiseaseParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        """Plain values only; the waning curve becomes its list of hazards."""
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["natural_immunity_waning"] = self.natural_immunity_waning.hazard.tolist()
        return d


@dataclass(frozen=True)
class MaskParams:
    infection_efficacy: float = 0.40
    transmission_efficacy: float = 0.60


def draw_infectivity(n: int, params: DiseaseParams, rng: np.random.Generator) -> np.ndarray:
    """Per-agent superspreading multipliers, gamma distributed with mean 1."""
    k = params.superspreader_shape
    if k is None:
        return np.ones(n)
    return rng.gamma(k, 1.0 / k, size=n)


def draw_symptomatic(n: int, params: DiseaseParams, rng: np.random.Generator) -> np.ndarray:
    return rng.random(n) >= params.asymptomatic_fraction


def pair_probability(beta, infectivity, stage_multiplier, infector_mask_factor,
                     susceptible_mask_factor, protection, transmission_reduction):
    """Multiplicative per-contact infection probability, clipped to [0, 1].

    Mask factors are ``1 - efficacy`` for masked agents and 1 otherwise.
    """
    p = (beta * infectivity * stage_multiplier * infector_mask_factor * susceptible_mask_factor
         * (1.0 - protection) * (1.0 - transmission_reduction))
    return np.clip(p, 0.0, 1.0)


@dataclass
class EpiArrays:
    """Disease and immunity columns for a whole population."""

    state: np.ndarray
    days_in_state: np.ndarray
    infectivity: np.ndarray
    symptomatic: np.ndarray
    vaccinated: np.ndarray
    boosted: np.ndarray
    doses: np.ndarray
    days_since_dose: np.ndarray
    infection_protection: np.ndarray
    transmission_reduction: np.ndarray
    prior_variant_infection: np.ndarray

    @classmethod
    def susceptible(cls, n: int, infectivity: np.ndarray | None = None) -> "EpiArrays":
        return cls(
            state=np.zeros(n, dtype=np.int8),
            days_in_state=np.zeros(n, dtype=np.int32),
            infectivity=np.ones(n) if infectivity is None else np.asarray(infectivity, dtype=float),
            symptomatic=np.ones(n, dtype=bool),
            vaccinated=np.zeros(n, dtype=bool),
            boosted=np.zeros(n, dtype=bool),
            doses=np.zeros(n, dtype=np.int8),
            days_since_dose=np.zeros(n, dtype=np.int32),
            infection_protection=np.zeros(n),
            transmission_reduction=np.zeros(n),
            prior_variant_infection=np.zeros(n, dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.state)

    def counts(self) -> np.ndarray:
        return np.bincount(self.state, minlength=N_STATES)


def advance_states(epi: EpiArrays, params: DiseaseParams, rng: np.random.Generator,
                   include: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance every non-susceptible agent by one day, in place.

    Returns ``(agents, from_state, to_state)`` for the transitions performed.
    ``include`` optionally restricts the update to a boolean subset.
    """
    active = epi.state != S
    if include is not None:
        active &= include
    idx = np.flatnonzero(active)
    if len(idx) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    st = epi.state[idx].astype(np.int64)
    before = epi.days_in_state[idx]
    days = before + 1

    new = st.copy()
    timed = params.durations()[st]
    done = (timed > 0) & (days >= timed)
    new[done & (st == E)] = np.where(epi.symptomatic[idx[done & (st == E)]], P, A)
    new[done & (st == P)] = Y
    new[done & ((st == Y) | (st == A))] = R

    rec = st == R
    if rec.any():
        h = params.natural_immunity_waning(before[rec])
        flip = rng.random(int(rec.sum())) < h
        r_idx = np.flatnonzero(rec)[flip]
        new[r_idx] = S

    changed = new != st
    days[changed] = 0
    epi.days_in_state[idx] = days
    epi.state[idx] = new.astype(np.int8)
    return idx[changed], st[changed], new[changed]


@dataclass(frozen=True)
class VaccineWaningTable:
    """Infection protection and transmission reduction by (doses, week)."""

    infection_protection: dict[int, np.ndarray]
    transmission_reduction: dict[int, np.ndarray]

    def __post_init__(self):
        if not self.infection_protection:
            raise ConfigurationError("vaccine waning table is empty")
        for d in self.infection_protection:
            for tab in (self.infection_protection[d], self.transmission_reduction[d]):
                if np.any(tab < 0) or np.any(tab > 1):
                    raise ConfigurationError("vaccine multipliers must be in [0, 1]")

    @classmethod
    def read_csv(cls, path: str | os.PathLike | None = None) -> "VaccineWaningTable":
        path = Path(path) if path is not None else DATA_DIR / "vaccine_waning.csv"
        rows: dict[int, list[tuple[int, float, float]]] = {}
        try:
            with open(path, newline="") as fh:
                for r in csv.DictReader(line for line in fh if not line.startswith("#")):
                    rows.setdefault(int(r["doses"]), []).append(
                        (int(r["week_index"]), float(r["infection_protection"]),
                         float(r["transmission_reduction"])))
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigurationError(f"cannot read vaccine waning table {path}: {exc}") from exc
        inf, trans = {}, {}
        for d, entries in rows.items():
            entries.sort()
            weeks = [w for w, _, _ in entries]
            if weeks != list(range(len(weeks))):
                raise ConfigurationError(f"{path}: weeks for {d} doses must run 0..k without gaps")
            inf[d] = np.array([e[1] for e in entries])
            trans[d] = np.array([e[2] for e in entries])
        return cls(inf, trans)

    def lookup(self, doses: np.ndarray, weeks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Multipliers for each (doses, week); weeks past the table hold the last row.

        Dose counts above the largest tabulated count use that count's row.
        """
        doses = np.asarray(doses)
        weeks = np.asarray(weeks)
        inf = np.zeros(len(doses))
        trans = np.zeros(len(doses))
        keys = sorted(self.infection_protection)
        capped = np.minimum(doses, keys[-1])
        for d in keys:
            sel = capped == d
            if sel.any():
                tab_i = self.infection_protection[d]
                w = np.minimum(weeks[sel], len(tab_i) - 1)
                inf[sel] = tab_i[w]
                trans[sel] = self.transmission_reduction[d][w]
        return inf, trans


def apply_vaccine_waning_arrays(epi: EpiArrays, table: VaccineWaningTable) -> None:
    """Refresh vaccine multipliers of vaccinated agents from the table, in place."""
    idx = np.flatnonzero(epi.vaccinated)
    if len(idx) == 0:
        return
    inf, trans = table.lookup(epi.doses[idx], epi.days_since_dose[idx] // 7)
    epi.infection_protection[idx] = inf
    epi.transmission_reduction[idx] = trans


def resolve_immune_escape_arrays(epi: EpiArrays, agents: np.ndarray, params: DiseaseParams,
                                 rng: np.random.Generator,
                                 recovery_days: tuple[int, int] = (60, 540)) -> np.ndarray:
    """Prior-variant infected ``agents`` either lose protection (probability
    ``immune_escape``) or start Recovered with days since recovery drawn
    uniformly from ``recovery_days`` (inclusive). Returns the escaped agents."""
    agents = np.asarray(agents, dtype=np.int64)
    escaped = rng.random(len(agents)) < params.immune_escape
    days = rng.integers(recovery_days[0], recovery_days[1] + 1, size=len(agents))
    epi.prior_variant_infection[agents] = True
    esc, kept = agents[escaped], agents[~escaped]
    epi.state[esc] = S
    epi.days_in_state[esc] = 0
    epi.state[kept] = R
    epi.days_in_state[kept] = days[~escaped]
    return esc


# --- single-agent API ---------------------------------------------------------

@dataclass(frozen=True)
class ImmunityRecord:
    vaccinated: bool = False
    doses: int = 0
    days_since_last_dose: int = 0
    boosted: bool = False
    infection_protection_multiplier: float = 0.0
    transmission_reduction_multiplier: float = 0.0
    days_since_recovery: int | None = None
    prior_variant_infection: bool = False

    def __post_init__(self):
        if self.boosted and not self.vaccinated:
            raise ConfigurationError("a boosted agent must be vaccinated")
        for name in ("infection_protection_multiplier", "transmission_reduction_multiplier"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class AgentEpiState:
    state: DiseaseState = DiseaseState.SUSCEPTIBLE
    days_in_state: int = 0
    infectivity_multiplier: float = 1.0
    immunity: ImmunityRecord = field(default_factory=ImmunityRecord)
    symptomatic_destiny: bool = True

    def __post_init__(self):
        if self.days_in_state < 0:
            raise ConfigurationError("days_in_state must be >= 0")
        if self.infectivity_multiplier <= 0:
            raise ConfigurationError("infectivity multiplier must be positive")

    def to_arrays(self) -> EpiArrays:
        im = self.immunity
        days = self.days_in_state
        if self.state == DiseaseState.RECOVERED and im.days_since_recovery is not None:
            days = im.days_since_recovery
        return EpiArrays(
            state=np.array([int(self.state)], dtype=np.int8),
            days_in_state=np.array([days], dtype=np.int32),
            infectivity=np.array([self.infectivity_multiplier]),
            symptomatic=np.array([self.symptomatic_destiny]),
            vaccinated=np.array([im.vaccinated]),
            boosted=np.array([im.boosted]),
            doses=np.array([im.doses], dtype=np.int8),
            days_since_dose=np.array([im.days_since_last_dose], dtype=np.int32),
            infection_protection=np.array([im.infection_protection_multiplier]),
            transmission_reduction=np.array([im.transmission_reduction_multiplier]),
            prior_variant_infection=np.array([im.prior_variant_infection]),
        )

    @classmethod
    def from_arrays(cls, epi: EpiArrays, i: int = 0) -> "AgentEpiState":
        state = DiseaseState(int(epi.state[i]))
        immunity = ImmunityRecord(
            vaccinated=bool(epi.vaccinated[i]),
            doses=int(epi.doses[i]),
            days_since_last_dose=int(epi.days_since_dose[i]),
            boosted=bool(epi.boosted[i]),
            infection_protection_multiplier=float(epi.infection_protection[i]),
            transmission_reduction_multiplier=float(epi.transmission_reduction[i]),
            days_since_recovery=int(epi.days_in_state[i]) if state == DiseaseState.RECOVERED else None,
            prior_variant_infection=bool(epi.prior_variant_infection[i]),
        )
        return cls(state, int(epi.days_in_state[i]), float(epi.infectivity[i]), immunity,
                   bool(epi.symptomatic[i]))


def infection_probability(infector: AgentEpiState, susceptible: AgentEpiState,
                          params: DiseaseParams, masks: MaskParams = MaskParams(),
                          infector_masked: bool = False, susceptible_masked: bool = False) -> float:
    if infector.state not in INFECTIOUS_STATES:
        raise ContractViolation(f"infector is {infector.state.name}, not infectious")
    if susceptible.state != DiseaseState.SUSCEPTIBLE:
        raise ContractViolation(f"target is {susceptible.state.name}, not susceptible")
    p = pair_probability(
        params.base_transmission_rate,
        infector.infectivity_multiplier,
        params.stage_multipliers()[int(infector.state)],
        1.0 - masks.transmission_efficacy if infector_masked else 1.0,
        1.0 - masks.infection_efficacy if susceptible_masked else 1.0,
        susceptible.immunity.infection_protection_multiplier,
        infector.immunity.transmission_reduction_multiplier,
    )
    return float(p)


def advance_disease_state(agent: AgentEpiState, params: DiseaseParams,
                          rng: np.random.Generator) -> AgentEpiState:
    if agent.state == DiseaseState.SUSCEPTIBLE:
        raise ContractViolation("advance_disease_state called on a susceptible agent")
    epi = agent.to_arrays()
    advance_states(epi, params, rng)
    return AgentEpiState.from_arrays(epi)


def apply_vaccine_waning(immunity: ImmunityRecord, table: VaccineWaningTable) -> ImmunityRecord:
    if not immunity.vaccinated:
        return immunity
    inf, trans = table.lookup(np.array([immunity.doses]), np.array([immunity.days_since_last_dose // 7]))
    return replace(immunity, infection_protection_multiplier=float(inf[0]),
                   transmission_reduction_multiplier=float(trans[0]))


def resolve_immune_escape(agent: AgentEpiState, params: DiseaseParams, rng: np.random.Generator,
                          recovery_days: tuple[int, int] = (60, 540)) -> AgentEpiState:
    epi = agent.to_arrays()
    resolve_immune_escape_arrays(epi, np.array([0]), params, rng, recovery_days)
    return AgentEpiState.from_arrays(epi)

"""Synthetic population and four-layer contact network.

Households are filled from a size distribution, ages are drawn from the age
marginal, and enrolled/employed agents are packed into school and workplace
contact groups. Home, school and work layers are cliques over site members;
the community layer is a negative-binomial stub-matched random graph.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import yaml

from .errors import ConfigurationError, QueryError

LAYERS = ("home", "school", "work", "community")
LAYER_CODE = {name: code for code, name in enumerate(LAYERS)}

SCHOOL_AGES = (5, 17)
WORK_AGES = (18, 65)
STUB_MATCH_PASSES = 100

DATA_DIR = Path(__file__).parent / "data"


@dataclass(frozen=True)
class AgeTable:
    """Probability or rate per inclusive integer age band."""

    lower: np.ndarray
    upper: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.lower) == 0:
            raise ConfigurationError("age table is empty")
        if not (len(self.lower) == len(self.upper) == len(self.values)):
            raise ConfigurationError("age table columns have different lengths")
        if np.any(self.upper < self.lower):
            raise ConfigurationError("age band with upper < lower")
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise ConfigurationError("age table values must be finite and non-negative")

    @classmethod
    def from_rows(cls, rows) -> "AgeTable":
        rows = list(rows)
        return cls(
            np.array([r[0] for r in rows], dtype=np.int64),
            np.array([r[1] for r in rows], dtype=np.int64),
            np.array([r[2] for r in rows], dtype=float),
        )

    def lookup(self, ages: np.ndarray) -> np.ndarray:
        """Value of the band containing each age; 0 outside every band."""
        out = np.zeros(len(ages), dtype=float)
        for lo, hi, v in zip(self.lower, self.upper, self.values):
            out[(ages >= lo) & (ages <= hi)] = v
        return out


@dataclass(frozen=True)
class SizeDistribution:
    sizes: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        if len(self.sizes) == 0:
            raise ConfigurationError("size distribution is empty")
        if len(self.sizes) != len(self.probabilities):
            raise ConfigurationError("size distribution columns have different lengths")
        if np.any(self.sizes < 1):
            raise ConfigurationError("site sizes must be >= 1")
        p = self.probabilities
        if np.any(~np.isfinite(p)) or np.any(p < 0) or p.sum() <= 0:
            raise ConfigurationError("size probabilities must be non-negative with positive sum")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SizeDistribution":
        items = sorted(mapping.items())
        return cls(np.array([k for k, _ in items], dtype=np.int64),
                   np.array([v for _, v in items], dtype=float))

    @property
    def mean(self) -> float:
        p = self.probabilities / self.probabilities.sum()
        return float(np.dot(self.sizes, p))

    def sample_until(self, total: int, rng: np.random.Generator) -> np.ndarray:
        """Site sizes summing to exactly ``total``; the last site is truncated."""
        if total <= 0:
            return np.zeros(0, dtype=np.int64)
        p = self.probabilities / self.probabilities.sum()
        chunks = []
        filled = 0
        while filled < total:
            batch = max(16, int(1.2 * (total - filled) / self.mean) + 1)
            draw = self.sizes[rng.choice(len(self.sizes), size=batch, p=p)]
            chunks.append(draw)
            filled += int(draw.sum())
        sizes = np.concatenate(chunks)
        cum = np.cumsum(sizes)
        last = int(np.searchsorted(cum, total))
        sizes = sizes[: last + 1].copy()
        sizes[-1] -= int(cum[last] - total)
        return sizes


@dataclass(frozen=True)
class PopulationConfig:
    age_distribution: AgeTable
    employment_rate_by_age: AgeTable
    enrollment_rate_by_age: AgeTable
    household_size_distribution: SizeDistribution
    school_size_distribution: SizeDistribution
    workplace_size_distribution: SizeDistribution
    n_agents: int = 50_000
    community_contact_mean: float = 4.0
    community_contact_dispersion: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if int(self.n_agents) < 2:
            raise ConfigurationError(f"n_agents must be >= 2, got {self.n_agents}")
        if self.community_contact_mean < 0:
            raise ConfigurationError("community_contact_mean must be >= 0")
        if self.community_contact_dispersion <= 0:
            raise ConfigurationError("community_contact_dispersion must be > 0")
        if self.age_distribution.values.sum() <= 0:
            raise ConfigurationError("age distribution has zero mass")
        for name in ("employment_rate_by_age", "enrollment_rate_by_age"):
            if np.any(getattr(self, name).values > 1):
                raise ConfigurationError(f"{name} contains rates above 1")

    def with_(self, **changes) -> "PopulationConfig":
        from dataclasses import replace
        return replace(self, **changes)


def _read_table(path: Path, columns: tuple[str, ...]) -> list[tuple]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(row for row in fh if not row.startswith("#"))
            missing = [c for c in columns if c not in (reader.fieldnames or [])]
            if missing:
                raise ConfigurationError(f"{path}: missing columns {missing}")
            rows = [tuple(float(r[c]) for c in columns) for r in reader]
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read table {path}: {exc}") from exc
    if not rows:
        raise ConfigurationError(f"{path}: table has no rows")
    return rows


def _read_sizes(path: Path) -> SizeDistribution:
    rows = _read_table(path, ("size", "probability"))
    return SizeDistribution(np.array([r[0] for r in rows], dtype=np.int64),
                            np.array([r[1] for r in rows], dtype=float))


def load_population_config(path: str | os.PathLike | None = None, **overrides) -> PopulationConfig:
    """Read a population YAML file whose table entries are paths relative to it.

    With no path the bundled US-like fixture is used.
    """
    path = Path(path) if path is not None else DATA_DIR / "population.yaml"
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read population config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: expected a mapping")
    base = path.parent
    tables = raw.get("tables", {})
    try:
        kwargs = dict(
            age_distribution=AgeTable.from_rows(
                _read_table(base / tables["age_distribution"], ("age_min", "age_max", "probability"))),
            employment_rate_by_age=AgeTable.from_rows(
                _read_table(base / tables["employment_rate"], ("age_min", "age_max", "rate"))),
            enrollment_rate_by_age=AgeTable.from_rows(
                _read_table(base / tables["enrollment_rate"], ("age_min", "age_max", "rate"))),
            household_size_distribution=_read_sizes(base / tables["household_size"]),
            school_size_distribution=_read_sizes(base / tables["school_size"]),
            workplace_size_distribution=_read_sizes(base / tables["workplace_size"]),
        )
    except KeyError as exc:
        raise ConfigurationError(f"{path}: missing table entry {exc}") from exc
    for key in ("n_agents", "community_contact_mean", "community_contact_dispersion", "rng_seed"):
        if key in raw:
            kwargs[key] = raw[key]
    kwargs.update(overrides)
    return PopulationConfig(**kwargs)


@dataclass(frozen=True)
class AgentRecord:
    agent_id: int
    age: int
    household_id: int
    school_id: int | None
    workplace_id: int | None


@dataclass
class Population:
    """Column store of agent demographics; iterates as AgentRecord."""

    age: np.ndarray
    household_id: np.ndarray
    school_id: np.ndarray      # -1 when not enrolled
    workplace_id: np.ndarray   # -1 when not employed

    def __len__(self) -> int:
        return len(self.age)

    def __getitem__(self, i: int) -> AgentRecord:
        s, w = int(self.school_id[i]), int(self.workplace_id[i])
        return AgentRecord(int(i), int(self.age[i]), int(self.household_id[i]),
                           s if s >= 0 else None, w if w >= 0 else None)

    def __iter__(self) -> Iterator[AgentRecord]:
        return (self[i] for i in range(len(self)))

    @property
    def n_agents(self) -> int:
        return len(self.age)

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["agent_id", "age", "household_id", "school_id", "workplace_id"])
            for i in range(len(self)):
                s, k = int(self.school_id[i]), int(self.workplace_id[i])
                w.writerow([i, int(self.age[i]), int(self.household_id[i]),
                            "" if s < 0 else s, "" if k < 0 else k])

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "Population":
        cols: dict[str, list[int]] = {k: [] for k in ("age", "household_id", "school_id", "workplace_id")}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                for k in cols:
                    v = row[k]
                    cols[k].append(int(v) if v != "" else -1)
        return cls(*(np.array(cols[k], dtype=np.int64) for k in ("age", "household_id", "school_id", "workplace_id")))


def canonical_edges(edges: np.ndarray) -> np.ndarray:
    """Orient each edge as (min, max), drop duplicates and sort lexicographically."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.sort(edges, axis=1)
    e = np.unique(e, axis=0)
    return e


@dataclass
class LayeredContactNetwork:
    n_agents: int
    layers: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name in LAYERS:
            self.layers.setdefault(name, np.zeros((0, 2), dtype=np.int64))

    def edges(self, layer: str) -> np.ndarray:
        if layer not in self.layers:
            raise QueryError(f"unknown layer {layer!r}; expected one of {LAYERS}")
        return self.layers[layer]

    def n_edges(self, layer: str | None = None) -> int:
        if layer is None:
            return sum(len(e) for e in self.layers.values())
        return len(self.edges(layer))

    def degrees(self, layer: str) -> np.ndarray:
        e = self.edges(layer)
        return np.bincount(e.ravel(), minlength=self.n_agents)

    def write(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            fh.write(f"# n_agents={self.n_agents}\n")
            for name in LAYERS:
                for a, b in self.layers[name]:
                    fh.write(f"{name},{a},{b}\n")

    @classmethod
    def read(cls, path: str | os.PathLike) -> "LayeredContactNetwork":
        n = None
        rows: dict[str, list[tuple[int, int]]] = {name: [] for name in LAYERS}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if "n_agents=" in line:
                        n = int(line.split("n_agents=")[1])
                    continue
                name, a, b = line.split(",")
                if name not in rows:
                    raise ConfigurationError(f"{path}: unknown layer {name!r}")
                rows[name].append((int(a), int(b)))
        layers = {k: canonical_edges(np.array(v, dtype=np.int64)) for k, v in rows.items()}
        if n is None:
            n = 1 + max((int(e.max()) for e in layers.values() if len(e)), default=-1)
        return cls(n, layers)


def _clique_edges(site_ids: np.ndarray) -> np.ndarray:
    """All member pairs for every site; ``site_ids`` is -1 for non-members."""
    members = np.flatnonzero(site_ids >= 0)
    if len(members) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    order = members[np.argsort(site_ids[members], kind="stable")]
    sites = site_ids[order]
    bounds = np.flatnonzero(np.diff(sites)) + 1
    groups = np.split(order, bounds)
    out = []
    cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for g in groups:
        s = len(g)
        if s < 2:
            continue
        if s not in cache:
            cache[s] = np.triu_indices(s, k=1)
        i, j = cache[s]
        out.append(np.column_stack((g[i], g[j])))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    return canonical_edges(np.concatenate(out))


def negative_binomial_degrees(n: int, mean: float, dispersion: float,
                              rng: np.random.Generator) -> np.ndarray:
    """Degrees with the given mean and variance ``mean + mean**2 / dispersion``."""
    if mean == 0:
        return np.zeros(n, dtype=np.int64)
    p = dispersion / (dispersion + mean)
    return rng.negative_binomial(dispersion, p, size=n).astype(np.int64)


def stub_match(degrees: np.ndarray, rng: np.random.Generator,
               passes: int = STUB_MATCH_PASSES) -> np.ndarray:
    """Pair stubs at random, re-pairing collided stubs; leftovers are dropped."""
    stubs = np.repeat(np.arange(len(degrees), dtype=np.int64), degrees)
    accepted = np.zeros((0, 2), dtype=np.int64)
    seen: set[int] = set()
    n = max(len(degrees), 1)
    for _ in range(passes):
        if len(stubs) < 2:
            break
        stubs = rng.permutation(stubs)
        if len(stubs) % 2:
            stubs = stubs[:-1]
        pairs = np.sort(stubs.reshape(-1, 2), axis=1)
        key = pairs[:, 0] * n + pairs[:, 1]
        ok = pairs[:, 0] != pairs[:, 1]
        # first occurrence of each key within this pass, and not previously accepted
        _, first = np.unique(key, return_index=True)
        is_first = np.zeros(len(key), dtype=bool)
        is_first[first] = True
        ok &= is_first
        if seen:
            ok &= np.fromiter((int(k) not in seen for k in key), dtype=bool, count=len(key))
        good = pairs[ok]
        seen.update(key[ok].tolist())
        accepted = np.concatenate((accepted, good))
        stubs = pairs[~ok].ravel()
    return canonical_edges(accepted)


def _pack(agents: np.ndarray, dist: SizeDistribution, rng: np.random.Generator) -> np.ndarray:
    """Site id for each agent in ``agents`` (already in packing order)."""
    sizes = dist.sample_until(len(agents), rng)
    return np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)


def generate_population(config: PopulationConfig) -> tuple[Population, LayeredContactNetwork]:
    rng = np.random.default_rng(config.rng_seed)
    n = int(config.n_agents)

    hh_sizes = config.household_size_distribution.sample_until(n, rng)
    household_id = np.repeat(np.arange(len(hh_sizes), dtype=np.int64), hh_sizes)

    ad = config.age_distribution
    p = ad.values / ad.values.sum()
    band = rng.choice(len(p), size=n, p=p)
    age = rng.integers(ad.lower[band], ad.upper[band] + 1)

    school_id = np.full(n, -1, dtype=np.int64)
    enroll_p = config.enrollment_rate_by_age.lookup(age)
    enroll_p[(age < SCHOOL_AGES[0]) | (age > SCHOOL_AGES[1])] = 0.0
    students = np.flatnonzero(rng.random(n) < enroll_p)
    # age-graded packing so contact groups resemble classrooms
    students = students[np.lexsort((rng.random(len(students)), age[students]))]
    school_id[students] = _pack(students, config.school_size_distribution, rng)

    workplace_id = np.full(n, -1, dtype=np.int64)
    employ_p = config.employment_rate_by_age.lookup(age)
    employ_p[(age < WORK_AGES[0]) | (age > WORK_AGES[1])] = 0.0
    workers = rng.permutation(np.flatnonzero(rng.random(n) < employ_p))
    workplace_id[workers] = _pack(workers, config.workplace_size_distribution, rng)

    degrees = negative_binomial_degrees(n, config.community_contact_mean,
                                        config.community_contact_dispersion, rng)
    layers = {
        "home": _clique_edges(household_id),
        "school": _clique_edges(school_id),
        "work": _clique_edges(workplace_id),
        "community": stub_match(degrees, rng),
    }
    return Population(age, household_id, school_id, workplace_id), LayeredContactNetwork(n, layers)


@dataclass(frozen=True)
class DegreeStats:
    mean: float
    variance: float
    max: int


def layer_degree_summary(net: LayeredContactNetwork, layer: str | None = None):
    """Degree statistics for one layer, or a dict over all layers."""
    if layer is None:
        return {name: layer_degree_summary(net, name) for name in LAYERS}
    deg = net.degrees(layer)
    if len(deg) == 0:
        return DegreeStats(0.0, 0.0, 0)
    return DegreeStats(float(deg.mean()), float(deg.var()), int(deg.max()))

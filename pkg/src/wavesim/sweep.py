"""Policy sweeps: expand lever levels into scenarios and persist replications.

Layout of a results directory::

    <output>/index.csv                      one row per scenario
    <output>/<scenario_id>/manifest.json    resolved parameters and provenance
    <output>/<scenario_id>/rep_00000.csv    one RunTimeSeries per replication

Every file is written to a temporary name and renamed into place, so a file
that exists is complete. Rerunning a sweep skips replications already on disk.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import engine
from .engine import BurnInSpec, RunTimeSeries, replication_seed
from .epi import DiseaseParams
from .errors import ConfigurationError
from .interventions import PolicyScenario, ScenarioLibrary
from .population import LayeredContactNetwork, Population

BASELINE = "baseline"
AXIS_ALIASES = {"beta": "base_transmission_rate"}
_DISEASE_FIELDS = {f.name for f in fields(DiseaseParams)}


@dataclass(frozen=True)
class SweepPlan:
    """Levers with the levels to cross, plus disease-parameter axes.

    ``levers`` maps a lever name from the scenario library to its levels;
    ``epidemiological_axes`` maps a DiseaseParams field to the values to cross.
    """

    levers: dict[str, tuple[str, ...]]
    epidemiological_axes: dict[str, tuple] = field(default_factory=dict)
    replications: int = 1
    master_seed: int = 0
    output_path: str = "sweep_results"
    calibration: str = "best_fit"
    horizon: int = engine.DEFAULT_HORIZON

    def __post_init__(self):
        levers = {str(k): tuple(str(x) for x in v) for k, v in (self.levers or {}).items()}
        axes = {AXIS_ALIASES.get(k, k): tuple(v) for k, v in (self.epidemiological_axes or {}).items()}
        object.__setattr__(self, "levers", levers)
        object.__setattr__(self, "epidemiological_axes", axes)
        if self.replications < 1:
            raise ConfigurationError("replications must be >= 1")
        if self.horizon < 0:
            raise ConfigurationError("horizon must be >= 0")
        for name, values in {**levers, **axes}.items():
            if len(values) == 0:
                raise ConfigurationError(f"{name!r} has no levels")
        unknown = set(axes) - _DISEASE_FIELDS
        if unknown:
            raise ConfigurationError(f"unknown epidemiological axes {sorted(unknown)}")

    @property
    def size(self) -> int:
        """Number of combinations in the cross-product."""
        return int(np.prod([len(v) for v in self.levers.values()] +
                           [len(v) for v in self.epidemiological_axes.values()], dtype=np.int64))

    @classmethod
    def from_dict(cls, d: dict) -> "SweepPlan":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown sweep plan keys {sorted(unknown)}")
        if "levers" not in d:
            raise ConfigurationError("sweep plan needs a 'levers' mapping")
        return cls(**d)

    @classmethod
    def read(cls, path: str | os.PathLike) -> "SweepPlan":
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read sweep plan {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path}: sweep plan must be a mapping")
        return cls.from_dict(raw)


def full_design(replications: int = 1, master_seed: int = 0, output_path: str = "sweep_results") -> SweepPlan:
    """The complete factorial design: three transmission rates, five immune
    escape values, three vaccination levels and ten on/off levers."""
    binary = ("boosting", "testing_pcr", "testing_antigen", "mask_efficacy", "mask_wearing",
              "remote_work", "school_closure", "community_distancing", "rollout", "tracing")
    levers = {"vaccination": (BASELINE, "+", "++")}
    levers.update({name: (BASELINE, "++") for name in binary})
    return SweepPlan(levers, {"base_transmission_rate": (0.09, 0.2, 0.55),
                              "immune_escape": (0.4, 0.5, 0.6, 0.7, 0.8)},
                     replications, master_seed, output_path)


@dataclass(frozen=True)
class SweepScenario:
    scenario_id: str
    levels: dict[str, str]
    axes: dict[str, object]
    policy: PolicyScenario
    disease: DiseaseParams


def _canonical(policy: PolicyScenario, disease: DiseaseParams) -> str:
    p = policy.to_dict()
    p.pop("name")
    return json.dumps({"policy": p, "disease": disease.to_dict()}, sort_keys=True, default=float)


def scenario_id(policy: PolicyScenario, disease: DiseaseParams) -> str:
    """Content hash of the resolved parameters (the scenario name is ignored)."""
    return hashlib.sha256(_canonical(policy, disease).encode()).hexdigest()[:16]


def expand_scenarios(plan: SweepPlan, library: ScenarioLibrary | None = None,
                     base_params: DiseaseParams | None = None) -> list[SweepScenario]:
    """All distinct scenarios of ``plan`` in a fixed order.

    Lever levels vary slowest in plan order, then the epidemiological axes.
    Combinations that resolve to identical parameters appear once.
    """
    library = library or ScenarioLibrary.load()
    for lever, levels in plan.levers.items():
        for level in levels:
            if level != BASELINE:
                library.level(lever, level)
            elif lever not in library.levers:
                raise ConfigurationError(f"unknown lever {lever!r}; known: {sorted(library.levers)}")
    base_params = (base_params or DiseaseParams()).with_(**library.disease_overrides(plan.calibration))
    lever_names = list(plan.levers)
    axis_names = list(plan.epidemiological_axes)
    diseases = [dict(zip(axis_names, combo))
                for combo in itertools.product(*(plan.epidemiological_axes[a] for a in axis_names))]
    disease_objs = [base_params.with_(**d) for d in diseases]
    out, seen = [], set()
    for combo in itertools.product(*(plan.levers[k] for k in lever_names)):
        levels = {k: v for k, v in zip(lever_names, combo)}
        active = {k: v for k, v in levels.items() if v != BASELINE}
        policy = library.scenario(plan.calibration, active)
        for axes, disease in zip(diseases, disease_objs):
            sid = scenario_id(policy, disease)
            if sid in seen:
                continue
            seen.add(sid)
            out.append(SweepScenario(sid, levels, axes, policy, disease))
    return out


def expand_plan(plan: SweepPlan, library: ScenarioLibrary | None = None,
                base_params: DiseaseParams | None = None) -> list[tuple[PolicyScenario, DiseaseParams, str]]:
    return [(s.policy, s.disease, s.scenario_id) for s in expand_scenarios(plan, library, base_params)]


# --- persistence -----------------------------------------------------------------------

def _software_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _series_text(series: RunTimeSeries) -> str:
    rows = [",".join(engine.SERIES_COLUMNS)]
    stacked = np.column_stack([series[k] for k in engine.SERIES_COLUMNS])
    rows.extend(",".join(str(int(v)) for v in row) for row in stacked)
    return "\n".join(rows) + "\n"


def population_fingerprint(pop: Population, net: LayeredContactNetwork) -> str:
    h = hashlib.sha256()
    for arr in (pop.age, pop.household_id, pop.school_id, pop.workplace_id):
        h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
    for layer in sorted(net.layers):
        h.update(layer.encode())
        h.update(np.ascontiguousarray(net.edges(layer), dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def rep_filename(rep: int) -> str:
    return f"rep_{rep:05d}.csv"


def check_writable(path: str | os.PathLike) -> Path:
    """Create ``path`` if needed and prove a file can be written inside it."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        fd, probe = tempfile.mkstemp(dir=out, prefix=".probe-")
        os.close(fd)
        os.unlink(probe)
    except OSError as exc:
        raise ConfigurationError(f"output path {out} is not writable: {exc}") from exc
    return out


def _manifest(s: SweepScenario, plan: SweepPlan, fingerprint: str) -> str:
    p = s.policy.to_dict()
    p.pop("name")
    doc = {
        "scenario_id": s.scenario_id,
        "calibration": plan.calibration,
        "levels": s.levels,
        "axes": s.axes,
        "policy": p,
        "disease": s.disease.to_dict(),
        "replications": plan.replications,
        "horizon": plan.horizon,
        "master_seed": plan.master_seed,
        "population": fingerprint,
        "software_version": _software_version(),
    }
    return json.dumps(doc, indent=1, sort_keys=True, default=float) + "\n"


# --- execution -------------------------------------------------------------------------

_SHARED: dict = {}


def _init_worker(pop, net, burn_in):
    _SHARED.update(pop=pop, net=net, burn_in=burn_in)


def _run_item(args) -> str:
    directory, sid, policy, disease, horizon, master_seed, rep = args
    series = engine.run_replication(_SHARED["pop"], _SHARED["net"], policy, disease, _SHARED["burn_in"],
                                    horizon, seed=replication_seed(master_seed, sid, rep))
    target = Path(directory) / rep_filename(rep)
    _atomic_write(target, _series_text(series))
    return str(target)


@dataclass(frozen=True)
class SweepResult:
    output_path: Path
    scenario_ids: tuple[str, ...]
    completed: int
    skipped: int

    @property
    def n_runs(self) -> int:
        return self.completed + self.skipped


def execute_sweep(plan: SweepPlan, pop: Population, net: LayeredContactNetwork, burn_in: BurnInSpec | None,
                  workers: int = 1, library: ScenarioLibrary | None = None,
                  base_params: DiseaseParams | None = None,
                  max_items: int | None = None) -> SweepResult:
    """Run every (scenario, replication) not already on disk.

    Replication r of scenario s uses the stream (master_seed, s, r), so results
    do not depend on ``workers`` or on which items ran in an earlier attempt.
    ``max_items`` stops after that many new items (the index is then not
    written); it exists to exercise resumption.
    """
    out = check_writable(plan.output_path)
    scenarios = expand_scenarios(plan, library, base_params)
    fingerprint = population_fingerprint(pop, net)
    todo, skipped = [], 0
    for s in scenarios:
        d = out / s.scenario_id
        d.mkdir(exist_ok=True)
        manifest = d / "manifest.json"
        text = _manifest(s, plan, fingerprint)
        if not manifest.exists() or manifest.read_text() != text:
            _atomic_write(manifest, text)
        for rep in range(plan.replications):
            if (d / rep_filename(rep)).exists():
                skipped += 1
            else:
                todo.append((str(d), s.scenario_id, s.policy, s.disease, plan.horizon, plan.master_seed, rep))
    if max_items is not None:
        todo = todo[:max_items]
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(pop, net, burn_in)) as ex:
            for _ in ex.map(_run_item, todo, chunksize=max(1, len(todo) // (8 * workers))):
                pass
    else:
        _init_worker(pop, net, burn_in)
        for item in todo:
            _run_item(item)
    done = len(todo)
    complete = skipped + done == len(scenarios) * plan.replications
    if complete:
        _write_index(out, scenarios, plan)
    return SweepResult(out, tuple(s.scenario_id for s in scenarios), done, skipped)


def _write_index(out: Path, scenarios: Sequence[SweepScenario], plan: SweepPlan) -> None:
    levers = list(plan.levers)
    axes = list(plan.epidemiological_axes)
    lines = [",".join(["scenario_id", *levers, *axes, "replications"])]
    for s in scenarios:
        lines.append(",".join([s.scenario_id, *(s.levels[k] for k in levers),
                               *(repr(s.axes[a]) for a in axes), str(plan.replications)]))
    _atomic_write(out / "index.csv", "\n".join(lines) + "\n")


# --- reading results ----------------------------------------------------------------------

@dataclass(frozen=True)
class StoredScenario:
    scenario_id: str
    manifest: dict
    runs: tuple[RunTimeSeries, ...]


def read_index(path: str | os.PathLike) -> list[dict]:
    index = Path(path) / "index.csv"
    if not index.exists():
        raise ConfigurationError(f"{path} has no index.csv; the sweep is missing or incomplete")
    with open(index, newline="") as fh:
        return list(csv.DictReader(fh))


def read_scenario(path: str | os.PathLike, sid: str) -> StoredScenario:
    d = Path(path) / sid
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read manifest for scenario {sid}: {exc}") from exc
    runs = tuple(RunTimeSeries.read_csv(f) for f in sorted(d.glob("rep_*.csv")))
    return StoredScenario(sid, manifest, runs)


def read_results(path: str | os.PathLike) -> dict[str, StoredScenario]:
    """Every indexed scenario with its manifest and replications, in index order."""
    return {row["scenario_id"]: read_scenario(path, row["scenario_id"]) for row in read_index(path)}

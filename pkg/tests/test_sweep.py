import filecmp
import json

import pytest

from wavesim import engine
from wavesim.errors import ConfigurationError
from wavesim.population import generate_population, load_population_config
from wavesim.sweep import (SweepPlan, execute_sweep, expand_plan, expand_scenarios, full_design, read_index,
                           read_results, rep_filename, scenario_id)


@pytest.fixture(scope="module")
def tiny_world():
    pop, net = generate_population(load_population_config(n_agents=800, rng_seed=3))
    return pop, net, engine.default_burn_in(len(pop))


def _plan(tmp_path, name="out", **kw):
    base = dict(levers={"mask_wearing": ["baseline", "++"]}, epidemiological_axes={"beta": [0.1, 0.2]},
                replications=5, master_seed=7, output_path=str(tmp_path / name), horizon=12)
    base.update(kw)
    return SweepPlan(**base)


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_same_tree(a / d, b / d) for d in cmp.common_dirs)


# --- expansion -----------------------------------------------------------------------

def test_single_lever_single_level():
    plan = SweepPlan({"boosting": ["++"]})
    assert len(expand_plan(plan)) == 1


def test_full_design_has_46080_combinations():
    plan = full_design()
    assert plan.size == 46_080
    ids = [sid for _, _, sid in expand_plan(plan)]
    assert len(ids) == 46_080
    assert len(set(ids)) == 46_080


def test_three_levers_three_levels_give_27_distinct_scenarios():
    levels = ["baseline", "+", "++"]
    plan = SweepPlan({"vaccination": levels, "boosting": levels, "testing": levels})
    out = expand_plan(plan)
    assert len(out) == 27
    assert len({sid for _, _, sid in out}) == 27


def test_expansion_order_is_stable():
    plan = SweepPlan({"boosting": ["baseline", "++"], "tracing": ["baseline", "+"]}, {"beta": [0.09, 0.55]})
    a = expand_scenarios(plan)
    b = expand_scenarios(plan)
    assert [s.scenario_id for s in a] == [s.scenario_id for s in b]
    assert [s.levels["boosting"] for s in a] == ["baseline"] * 4 + ["++"] * 4
    assert [s.axes["base_transmission_rate"] for s in a[:2]] == [0.09, 0.55]
    assert a[1].disease.base_transmission_rate == 0.55


def test_scenario_id_is_a_content_hash(library):
    sc = library.scenario("best_fit")
    params = expand_scenarios(SweepPlan({"boosting": ["baseline"]}))[0].disease
    assert scenario_id(sc, params) == scenario_id(sc.with_(name="renamed"), params)
    assert scenario_id(sc, params) != scenario_id(sc.with_(booster_coverage=0.3), params)
    assert scenario_id(sc, params) != scenario_id(sc, params.with_(immune_escape=0.5))


def test_unknown_lever_or_level_rejected():
    with pytest.raises(ConfigurationError):
        expand_plan(SweepPlan({"levitation": ["++"]}))
    with pytest.raises(ConfigurationError):
        expand_plan(SweepPlan({"boosting": ["+++"]}))
    with pytest.raises(ConfigurationError):
        SweepPlan({"boosting": ["++"]}, {"warp": [1]})
    with pytest.raises(ConfigurationError):
        SweepPlan({"boosting": ["++"]}, replications=0)


def test_plan_file(tmp_path):
    path = tmp_path / "plan.yaml"
    path.write_text("levers:\n  boosting: [baseline, '++']\nepidemiological_axes:\n  beta: [0.09, 0.2]\n"
                    "replications: 3\nmaster_seed: 4\n")
    plan = SweepPlan.read(path)
    assert plan.size == 4 and plan.replications == 3
    assert plan.epidemiological_axes == {"base_transmission_rate": (0.09, 0.2)}
    path.write_text("levers: {boosting: [baseline]}\nbogus: 1\n")
    with pytest.raises(ConfigurationError):
        SweepPlan.read(path)


# --- execution -----------------------------------------------------------------------

def test_one_scenario_one_replication(tmp_path, tiny_world):
    pop, net, burn_in = tiny_world
    plan = SweepPlan({"boosting": ["++"]}, output_path=str(tmp_path / "one"), horizon=5)
    res = execute_sweep(plan, pop, net, burn_in)
    assert res.completed == 1 and res.n_runs == 1
    stored = read_results(tmp_path / "one")
    assert len(stored) == 1
    (only,) = stored.values()
    assert len(only.runs) == 1 and len(only.runs[0]) == 6
    assert only.manifest["levels"] == {"boosting": "++"}


def test_completeness_and_layout(tmp_path, tiny_world):
    pop, net, burn_in = tiny_world
    plan = _plan(tmp_path)
    res = execute_sweep(plan, pop, net, burn_in)
    assert res.n_runs == 4 * 5
    index = read_index(plan.output_path)
    assert [row["scenario_id"] for row in index] == list(res.scenario_ids)
    for sid in res.scenario_ids:
        d = tmp_path / "out" / sid
        assert sorted(p.name for p in d.glob("rep_*.csv")) == [rep_filename(r) for r in range(5)]
        manifest = json.loads((d / "manifest.json").read_text())
        assert manifest["scenario_id"] == sid and manifest["master_seed"] == 7
        assert "software_version" in manifest and "population" in manifest
    assert not list((tmp_path / "out").rglob(".tmp-*"))


def test_rerun_is_bit_identical(tmp_path, tiny_world):
    pop, net, burn_in = tiny_world
    execute_sweep(_plan(tmp_path, "a"), pop, net, burn_in)
    execute_sweep(_plan(tmp_path, "b"), pop, net, burn_in)
    assert _same_tree(tmp_path / "a", tmp_path / "b")


def test_interrupted_sweep_resumes_to_identical_results(tmp_path, tiny_world):
    pop, net, burn_in = tiny_world
    execute_sweep(_plan(tmp_path, "full"), pop, net, burn_in)
    partial = execute_sweep(_plan(tmp_path, "resumed"), pop, net, burn_in, max_items=7)
    assert partial.completed == 7
    assert not (tmp_path / "resumed" / "index.csv").exists()
    rest = execute_sweep(_plan(tmp_path, "resumed"), pop, net, burn_in, workers=2)
    assert rest.skipped == 7 and rest.completed == 13
    assert _same_tree(tmp_path / "full", tmp_path / "resumed")


def test_seed_isolation_across_scenarios(tmp_path, tiny_world):
    # changing one scenario's parameters leaves the other scenarios untouched
    pop, net, burn_in = tiny_world
    a = execute_sweep(_plan(tmp_path, "a", epidemiological_axes={"beta": [0.1, 0.2]}), pop, net, burn_in)
    b = execute_sweep(_plan(tmp_path, "b", epidemiological_axes={"beta": [0.1, 0.3]}), pop, net, burn_in)
    shared = set(a.scenario_ids) & set(b.scenario_ids)
    assert len(shared) == 2
    for sid in shared:
        for rep in range(5):
            fa = tmp_path / "a" / sid / rep_filename(rep)
            fb = tmp_path / "b" / sid / rep_filename(rep)
            assert fa.read_bytes() == fb.read_bytes()


def test_unwritable_output_fails_before_running(tmp_path, tiny_world):
    pop, net, burn_in = tiny_world
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    plan = _plan(tmp_path, output_path=str(blocker / "results"))
    with pytest.raises(ConfigurationError):
        execute_sweep(plan, pop, net, burn_in)


def test_changed_plan_does_not_reuse_stale_manifest(tmp_path, tiny_world):
    pop, net, burn_in = tiny_world
    execute_sweep(_plan(tmp_path, "x", replications=2), pop, net, burn_in)
    res = execute_sweep(_plan(tmp_path, "x", replications=3), pop, net, burn_in)
    assert res.skipped == 8 and res.completed == 4
    manifest = json.loads((tmp_path / "x" / res.scenario_ids[0] / "manifest.json").read_text())
    assert manifest["replications"] == 3

import csv

import pytest

from wavesim import engine
from wavesim.cli import main
from wavesim.sweep import read_results, rep_filename


@pytest.fixture(scope="module")
def pop_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("pop")
    assert main(["gen-pop", "--n-agents", "600", "--out", str(out)]) == 0
    return out


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_plan(path, levers, reps=2, horizon=8):
    lines = ["levers:"]
    lines += [f"  {k}: [{', '.join(repr(v) for v in vals)}]" for k, vals in levers.items()]
    lines += [f"replications: {reps}", f"horizon: {horizon}", "master_seed: 3"]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_gen_pop_writes_population_and_network(pop_dir, capsys):
    assert (pop_dir / "population.csv").exists() and (pop_dir / "network.csv").exists()
    assert len(_rows(pop_dir / "population.csv")) == 600


def test_unknown_subcommand_exits_2(capsys):
    assert main(["teleport"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_subcommand_exits_2(capsys):
    assert main([]) == 2


def test_simulate_twice_same_seed_identical(tmp_path, pop_dir):
    args = ["simulate", "--population", str(pop_dir), "--reps", "2", "--horizon", "10", "--seed", "5",
            "--level", "mask_wearing=++"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in (rep_filename(0), rep_filename(1), "mean_series.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(args[:-4] + ["--seed", "6", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / rep_filename(0)).read_bytes() != (tmp_path / "c" / rep_filename(0)).read_bytes()


def test_environment_supplies_seed_and_output(tmp_path, pop_dir, monkeypatch):
    monkeypatch.setenv("WAVESIM_SEED", "5")
    monkeypatch.setenv("WAVESIM_OUTPUT", str(tmp_path / "env"))
    assert main(["simulate", "--population", str(pop_dir), "--horizon", "6"]) == 0
    monkeypatch.delenv("WAVESIM_OUTPUT")
    assert main(["simulate", "--population", str(pop_dir), "--horizon", "6", "--seed", "5",
                 "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "env" / rep_filename(0)).read_bytes() == (tmp_path / "flag" / rep_filename(0)).read_bytes()


def test_simulate_unknown_lever_exits_2(tmp_path, pop_dir, capsys):
    code = main(["simulate", "--population", str(pop_dir), "--level", "prayer=++", "--out", str(tmp_path)])
    assert code == 2
    assert "prayer" in capsys.readouterr().err


def test_estimate_r0_prints_estimate_and_run_count(pop_dir, capsys):
    assert main(["estimate-r0", "--population", str(pop_dir), "--beta", "0.2", "--runs", "25",
                 "--workers", "1"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("R0 ")
    assert "beta 0.2" in out and "over 25 index runs" in out


def test_runtime_failure_exits_1(pop_dir, capsys):
    assert main(["estimate-r0", "--population", str(pop_dir), "--beta", "0", "--runs", "3",
                 "--workers", "1"]) == 1
    assert "undefined" in capsys.readouterr().err


def test_malformed_config_exits_2(tmp_path, pop_dir):
    bad = tmp_path / "plan.yaml"
    bad.write_text("levers: [unclosed\n")
    assert main(["sweep", "--population", str(pop_dir), "--plan", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--population", str(tmp_path / "nowhere")]) == 2


def test_calibrate_writes_leaderboard(tmp_path, pop_dir):
    grid = tmp_path / "grid.yaml"
    grid.write_text("base_transmission_rate: [0.1, 0.2]\nimmune_escape: [0.4, 0.8]\n")
    out = tmp_path / "board.csv"
    assert main(["calibrate", "--population", str(pop_dir), "--grid", str(grid), "--reps", "2",
                 "--horizon", "8", "--workers", "1", "--out", str(out)]) == 0
    rows = _rows(out)
    assert [r["rank"] for r in rows] == ["1", "2", "3", "4"]


def test_sweep_and_report(tmp_path, pop_dir, capsys):
    plan = _write_plan(tmp_path / "plan.yaml", {"vaccination": ["baseline", "++"], "testing": ["baseline", "++"]})
    results = tmp_path / "results"
    assert main(["sweep", "--population", str(pop_dir), "--plan", str(plan), "--out", str(results),
                 "--workers", "1"]) == 0
    assert main(["report", str(results)]) == 0
    report = results / "report"
    summary = _rows(report / "summary.csv")
    assert len(summary) == 4
    stored = read_results(results)
    baseline = next(sid for sid, s in stored.items()
                    if all(v == "baseline" for v in s.manifest["levels"].values()))
    row = next(r for r in summary if r["scenario_id"] == baseline)
    assert float(row["pct_reduction_mean"]) == 0.0
    assert len(_rows(report / "series_long.csv")) == 4 * 9
    cross = _rows(report / "crosstab.csv")
    assert [r["row"] for r in cross] == ["vaccination=baseline", "vaccination=++"]
    metrics = {r["metric"] for r in _rows(report / "summary_long.csv")}
    assert "pct_reduction_cumulative" in metrics


def test_report_baseline_only(tmp_path, pop_dir):
    plan = _write_plan(tmp_path / "plan.yaml", {"boosting": ["baseline"]})
    results = tmp_path / "results"
    assert main(["sweep", "--population", str(pop_dir), "--plan", str(plan), "--out", str(results)]) == 0
    assert main(["report", str(results), "--out", str(tmp_path / "rep")]) == 0
    (row,) = _rows(tmp_path / "rep" / "summary.csv")
    assert float(row["pct_reduction_mean"]) == 0.0


def test_report_missing_baseline_exits_2(tmp_path, pop_dir, capsys):
    plan = _write_plan(tmp_path / "plan.yaml", {"boosting": ["baseline", "++"]})
    results = tmp_path / "results"
    assert main(["sweep", "--population", str(pop_dir), "--plan", str(plan), "--out", str(results)]) == 0
    capsys.readouterr()
    assert main(["report", str(results), "--baseline", "deadbeefdeadbeef"]) == 2
    assert "deadbeefdeadbeef" in capsys.readouterr().err


def test_sweep_unwritable_output_exits_2(tmp_path, pop_dir):
    plan = _write_plan(tmp_path / "plan.yaml", {"boosting": ["baseline"]})
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["sweep", "--population", str(pop_dir), "--plan", str(plan), "--out", str(blocker / "r")]) == 2


@pytest.mark.slow
def test_desk_scale_six_lever_report(tmp_path, pop_dir):
    levels = ["baseline", "+", "++"]
    levers = {k: levels for k in ("vaccination", "boosting", "testing", "social_distancing", "rollout", "tracing")}
    plan = _write_plan(tmp_path / "plan.yaml", levers, reps=2, horizon=6)
    results = tmp_path / "results"
    assert main(["sweep", "--population", str(pop_dir), "--plan", str(plan), "--out", str(results),
                 "--workers", "1"]) == 0
    assert main(["report", str(results)]) == 0
    summary = _rows(results / "report" / "summary.csv")
    assert len(summary) == 3 ** 6
    assert len({r["scenario_id"] for r in summary}) == 3 ** 6
    assert all(int(r["peak_infected"]) <= 600 for r in summary)


def test_default_horizon_matches_wave_window():
    assert engine.DEFAULT_HORIZON == 61

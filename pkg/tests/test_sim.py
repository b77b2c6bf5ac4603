import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from maxent_games.cli import main
from maxent_games.game import ContractError
from maxent_games.planner import Strategy
from maxent_games.sim import (OUTCOMES, EpisodeConfig, Perturbation, control_total_variation, csv_columns,
                              episode_summary, format_matrix, lower_triangle_pairs, run_episode, write_csv)

SHORT = EpisodeConfig(max_steps=30)


@pytest.fixture(scope="module")
def qmdp_vs_noyield(scenario):
    return run_episode(EpisodeConfig(strategies=("qmdp", "noyield")), scenario)


# -- helpers ----------------------------------------------------------------


def test_total_variation_examples():
    assert control_total_variation(np.full(10, 0.7)) == 0.0
    assert control_total_variation(np.array([1.0, -1.0] * 5)) == pytest.approx(18.0)
    with pytest.raises(ContractError):
        control_total_variation(np.array([1.0]))


def test_perturbation_parsing():
    assert Perturbation.parse("none").kind == "none"
    p = Perturbation.parse("sin", accel_limit=2.0)
    assert (p.kind, p.amplitude, p.period) == ("sin", 1.0, 1.5)
    p = Perturbation.parse("sin:0.4,2")
    assert p.amplitude == 0.4 and p.value(0.5, None) == pytest.approx(0.4)
    assert Perturbation.parse("rand:0.3").sigma == 0.3
    for bad in ("rand", "step:1", "sin:1,0", "rand:-1"):
        with pytest.raises(ContractError):
            Perturbation.parse(bad)


def test_periods():
    assert EpisodeConfig().periods() == (10, 1, 5)
    assert EpisodeConfig(scheduler="sequential").periods() == (1, 1, 1)
    assert EpisodeConfig(rates=(20.0, 10.0, 20.0)).periods() == (1, 2, 1)
    with pytest.raises(ContractError):
        EpisodeConfig(rates=(3.0, 20.0, 100.0))
    with pytest.raises(ContractError):
        EpisodeConfig(latency_steps=-1)
    with pytest.raises(ContractError):
        EpisodeConfig(scheduler="async")


def test_matrix_pairs_and_format():
    pairs = lower_triangle_pairs()
    assert len(pairs) == 10 and pairs[0] == (Strategy.YIELD, Strategy.YIELD)
    assert (Strategy.QMDP, Strategy.YIELD) in pairs and (Strategy.YIELD, Strategy.QMDP) not in pairs
    table = {p: {"success_rate": 1.0} for p in pairs}
    lines = format_matrix(table).splitlines()
    assert len(lines) == 5 and lines[-1].startswith("QMDP") and lines[-1].split()[1:] == ["1.0"] * 4


# -- episodes ---------------------------------------------------------------


def test_sequential_episode_is_deterministic(scenario):
    cfg = replace(SHORT, scheduler="sequential", perturbation=Perturbation.parse("rand:0.2"))
    a, b = run_episode(cfg, scenario), run_episode(cfg, scenario)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.beliefs, b.beliefs)
    c = run_episode(replace(cfg, seed=1), scenario)
    assert not np.array_equal(a.states, c.states)


def test_full_rate_multirate_equals_sequential(scenario):
    seq = run_episode(replace(SHORT, scheduler="sequential"), scenario)
    multi = run_episode(replace(SHORT, rates=(20.0, 20.0, 20.0)), scenario)
    np.testing.assert_allclose(multi.states, seq.states, atol=1e-9)
    np.testing.assert_allclose(multi.beliefs, seq.beliefs, atol=1e-9)


def test_threaded_scheduler_runs(scenario):
    ep = run_episode(replace(SHORT, scheduler="threaded", max_steps=15), scenario)
    assert ep.num_steps == 15 and not ep.error


def test_zero_latency_applies_the_command(scenario):
    ep = run_episode(replace(SHORT, process_noise=0.0), scenario)
    np.testing.assert_allclose(ep.controls, ep.commanded, atol=1e-12)


@pytest.mark.parametrize("latency", [1, 3])
def test_latency_replays_the_first_command(scenario, latency):
    # without noise the state stays on the first command's own reference until
    # the next command clears the delay
    ep = run_episode(replace(SHORT, latency_steps=latency, process_noise=0.0), scenario)
    np.testing.assert_allclose(ep.controls[:latency + 1], np.tile(ep.commanded[0], (latency + 1, 1)), atol=1e-12)
    assert np.abs(ep.controls[latency + 1] - ep.commanded[0]).max() > 1e-6


def test_beliefs_stay_on_the_simplex(qmdp_vs_noyield):
    ep = qmdp_vs_noyield
    np.testing.assert_allclose(ep.beliefs.sum(axis=-1), 1.0, atol=1e-9)
    np.testing.assert_allclose(ep.naive_beliefs.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(ep.beliefs >= 0) and np.all(ep.naive_beliefs >= 0)


def test_qmdp_infers_a_consistent_opponent(qmdp_vs_noyield):
    ep = qmdp_vs_noyield
    assert ep.outcome == "success" and ep.outcome in OUTCOMES
    assert ep.beliefs[-1, 0, 1] >= 0.9
    # a non-inferring agent reports its own fixed mode
    np.testing.assert_array_equal(ep.beliefs[:, 1], np.tile([0.0, 1.0], (ep.num_steps, 1)))


def test_zero_length_episode_returns_the_prior(scenario):
    ep = run_episode(replace(SHORT, max_steps=0), scenario)
    assert ep.num_steps == 0 and ep.outcome == "timeout"
    np.testing.assert_allclose(ep.prior.sum(), 1.0)


@pytest.mark.parametrize("pair,outcome", [(("yield", "yield"), "freeze"), (("noyield", "noyield"), "collision")])
def test_mismatched_fixed_strategies_fail(scenario, pair, outcome):
    ep = run_episode(EpisodeConfig(strategies=pair), scenario)
    assert ep.outcome == outcome


def test_episode_contracts(scenario):
    with pytest.raises(ContractError):
        run_episode(EpisodeConfig(strategies=("qmdp",)), scenario)
    with pytest.raises(ContractError):
        EpisodeConfig(strategies=("qmdp", "greedy"))


# -- export -----------------------------------------------------------------


def test_csv_columns_are_stable(qmdp_vs_noyield, tmp_path):
    cols = csv_columns()
    assert cols[:4] == ["step", "time", "x0_px", "x0_py"]
    assert cols[-3:] == ["ne_us", "policy0_us", "policy1_us"] and len(cols) == len(set(cols))
    path = write_csv(qmdp_vs_noyield, tmp_path / "ep.csv")
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == cols and len(rows) == qmdp_vs_noyield.num_steps + 1
    assert all(len(r) == len(cols) for r in rows)
    np.testing.assert_allclose([float(v) for v in rows[1][2:18]], qmdp_vs_noyield.states[0], rtol=1e-8)


def test_summary_is_json_ready(qmdp_vs_noyield):
    s = json.loads(json.dumps(episode_summary(qmdp_vs_noyield)))
    assert s["ego"] == "QMDP" and s["other"] == "NoYield" and s["outcome"] == "success"
    assert s["config"]["strategies"] == ["QMDP", "NoYield"]


# -- command line -----------------------------------------------------------


def test_cli_toy(tmp_path, capsys):
    assert main(["toy", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "QMDP ego mean" in out
    summary = json.loads((tmp_path / "toy_summary.json").read_text())
    assert summary["prior"][0] == pytest.approx(0.52, abs=0.02)
    assert (tmp_path / "toy_densities.csv").read_text().startswith("u,pi1,pi2")


def test_cli_merge(tmp_path, capsys):
    assert main(["merge", "--ego", "ml", "--other", "yield", "--steps", "20", "--out", str(tmp_path)]) == 0
    assert "ML vs Yield seed 0" in capsys.readouterr().out
    assert (tmp_path / "ml_vs_yield_seed0.csv").exists()
    assert json.loads((tmp_path / "ml_vs_yield_seed0.json").read_text())["steps"] == 20


def test_cli_matrix_and_perturb(tmp_path, capsys):
    assert main(["matrix", "--seeds", "1", "--steps", "5", "--out", str(tmp_path)]) == 0
    assert "ego \\ other" in capsys.readouterr().out
    assert len(json.loads((tmp_path / "matrix.json").read_text())) == 10
    assert main(["perturb", "--seeds", "1", "--steps", "10", "--out", str(tmp_path)]) == 0
    pairs = json.loads((tmp_path / "perturb.json").read_text())["pairs"]
    assert len(pairs) == 1 and pairs[0]["tv_ml"] >= 0


def test_cli_scenario_file(tmp_path, capsys):
    path = tmp_path / "s.toml"
    path.write_text("[weights]\ncollision = 300.0\n")
    assert main(["merge", "--steps", "3", "--scenario", str(path)]) == 0
    with pytest.raises(SystemExit):
        main(["merge", "--rates", "1,2"])

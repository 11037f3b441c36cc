#!/usr/bin/env python3
"""
Tests for scenario configuration, the end-to-end pipeline, replay,
the run registry and the command line.
"""

import json
import math
import os
import sys
import tempfile

import numpy as np
import pytest

from epidemic import ConfigurationError
from harness import (
    METRICS_FILE,
    SUMMARY_FILE,
    RunDatabase,
    ScenarioConfig,
    load_config,
    replay,
    resolve_contact_model,
    run_scenario,
    run_seed,
    scenario_suite,
    simulate,
    write_summary_json,
)
from main import build_parser
from main import main as cli_main
from observation import ReplayError

HERE = os.path.dirname(os.path.abspath(__file__))


def _small(**changes) -> ScenarioConfig:
    base = {"name": "small", "n": 300, "c0": 0.6, "horizon": 12, "seeds": [42]}
    base.update(changes)
    return ScenarioConfig(**base)


def _read(path: str) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def test_empty_config_gives_standard_defaults():
    cfg = load_config()
    assert (cfg.beta, cfg.delta, cfg.gamma, cfg.alpha, cfg.vartheta) == (0.5, 0.25, 0.5, 0.1, 0.05)
    assert (cfg.p_fa, cfg.p_tp, cfg.p_move, cfg.d_inf) == (0.1, 0.9, 0.1, 0.007)
    assert cfg.n_users == 1200
    assert cfg.effective_d_inf == pytest.approx(0.007 * math.sqrt(5))
    np.testing.assert_allclose(cfg.prior_model().distribution, [0.989, 0, 0, 0.01, 0.001, 0], atol=1e-15)
    assert cfg.tests_per_step == 24


def test_invalid_values_name_the_field():
    with pytest.raises(ConfigurationError, match="beta"):
        load_config(overrides={"beta": 1.5})
    with pytest.raises(ConfigurationError, match="horizon"):
        load_config(overrides={"horizon": 0})
    with pytest.raises(ConfigurationError, match="colour"):
        load_config(overrides={"colour": "red"})
    with pytest.raises(ConfigurationError, match="prior"):
        load_config(overrides={"prior": {"S": 0.5, "I": 0.2}})
    with pytest.raises(ConfigurationError, match="f_file"):
        load_config(overrides={"f_source": "file"})


def test_degraded_reports_accepted():
    cfg = load_config(overrides={"p_fa": 0.2, "p_tp": 0.75})
    assert cfg.epidemic_params().p_fa == 0.2


def test_config_files_and_presets():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "scenario.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"n": 500, "c0": 0.4, "seeds": [1, 2]}, f)
        cfg = load_config(path)
        assert (cfg.n, cfg.n_users, cfg.seeds) == (500, 200, [1, 2])
        for name in ("paper", "full"):
            cfg = load_config(path, preset=name)
            assert cfg.n == 10000 and not cfg.rescale_d_inf
            assert cfg.effective_d_inf == 0.007
        desk_preset = load_config(path, preset="desk")
        assert desk_preset.n == 2000 and desk_preset.rescale_d_inf

        broken = os.path.join(tmp, "broken.json")
        with open(broken, "w", encoding="utf-8") as f:
            f.write("{")
        with pytest.raises(ConfigurationError):
            load_config(broken)
    with pytest.raises(ConfigurationError):
        load_config(os.path.join(HERE, "missing.json"))
    with pytest.raises(ConfigurationError):
        load_config(preset="huge")

    desk = load_config(os.path.join(HERE, "config.json"))
    assert desk.n == 2000 and desk.seeds == [42]
    full = load_config(os.path.join(HERE, "config_full.json"))
    assert full.n_users == 6000
    assert full.effective_d_inf == 0.007


def test_config_hash_ignores_bookkeeping():
    a = _small()
    assert a.config_hash() == _small(seeds=[1, 2], output_dir="elsewhere", threads=4).config_hash()
    assert a.config_hash() != _small(beta=0.4).config_hash()


def test_scenario_suites():
    fig2 = scenario_suite("fig2")
    assert len(fig2) == 1 and fig2[0].c0 == 0.6
    assert fig2[0].seeds == [1, 2, 3, 4, 5]

    fig1 = scenario_suite("fig1_limits")
    assert [cfg.c0 for cfg in fig1] == [0.2, 0.4, 0.6, 0.8, 1.0]
    assert all(cfg.p_fa == 0.2 and cfg.p_tp == 0.75 for cfg in fig1)

    fig3 = scenario_suite("fig3", load_config(preset="full"))
    assert [cfg.n_test for cfg in fig3] == [25, 50, 100]
    assert all(cfg.n_users == 6000 for cfg in fig3)
    assert len({cfg.name for cfg in fig3}) == 3

    with pytest.raises(ConfigurationError):
        scenario_suite("fig9")


def test_simulation_is_reproducible():
    cfg = _small(early_stop=False)
    a, b = simulate(cfg, 7), simulate(cfg, 7)
    np.testing.assert_array_equal(a.true_states, b.true_states)
    assert a.times == b.times
    for fa, fb in zip(a.log.frames, b.log.frames):
        np.testing.assert_array_equal(fa.reports, fb.reports)
        np.testing.assert_array_equal(fa.user_pairs, fb.user_pairs)
    assert a.immunity_violations == 0
    assert a.times == list(range(1, cfg.horizon + 1))
    assert not np.array_equal(a.true_states, simulate(cfg, 8).true_states)


def test_single_step_horizon():
    sim = simulate(_small(horizon=1), 42)
    assert sim.times == [1]
    assert sim.true_states.shape == (1, 300)


def test_early_stop_on_extinction():
    cfg = _small(prior={"S": 1.0}, vartheta=0.0)
    sim = simulate(cfg, 3)
    assert sim.times == [1]
    assert len(simulate(cfg.with_updates(early_stop=False), 3).times) == cfg.horizon


def test_contact_model_sources():
    cfg = _small(f_source="poisson", f_lambda=0.4)
    assert resolve_contact_model(cfg).mean == pytest.approx(0.4, rel=1e-6)
    with pytest.raises(ConfigurationError):
        resolve_contact_model(_small())
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "f.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"pmf": [0.25, 0.75]}, f)
        assert resolve_contact_model(_small(f_source="file", f_file=path)).pmf.tolist() == [0.25, 0.75]


def test_run_is_deterministic_across_threads():
    cfg = _small(horizon=15)
    with tempfile.TemporaryDirectory() as one, tempfile.TemporaryDirectory() as two:
        first = run_seed(cfg, 42, out_root=one, threads=1)
        again = run_seed(cfg, 42, out_root=two, threads=3)
        assert _read(os.path.join(first.run_dir, METRICS_FILE)) == _read(os.path.join(again.run_dir, METRICS_FILE))
        assert first.config_hash == again.config_hash
        assert first.summary == again.summary
        assert first.run_dir.endswith(os.path.join("small", "seed_42"))
        for name in ("observations.ndjson", "user_contacts.csv", "stream.json", "nonuser_f.json", "ground_truth.npz"):
            assert os.path.exists(os.path.join(first.run_dir, name))


def test_replay_matches_in_process_metrics():
    cfg = _small(horizon=10, dump_beliefs=True)
    with tempfile.TemporaryDirectory() as tmp:
        record = run_seed(cfg, 5, out_root=tmp)
        assert os.path.exists(os.path.join(record.run_dir, "beliefs.csv"))
        replayed = replay(record.run_dir)
        assert replayed.rows == record.rows
        assert len(replayed.states) == len(record.rows)

        os.remove(os.path.join(record.run_dir, "nonuser_f.json"))
        with pytest.raises(ReplayError):
            replay(record.run_dir)
        with pytest.raises(ReplayError):
            replay(record.run_dir, _small(n=400, f_source="poisson"))


def test_perfect_information_identifies_every_symptomatic_case():
    cfg = ScenarioConfig(
        name="oracle", n=200, c0=1.0, horizon=40, p_fa=0.0, p_tp=1.0, vartheta=0.0, alpha=0.0, seeds=[42]
    )
    with tempfile.TemporaryDirectory() as tmp:
        record = run_seed(cfg, 42, out_root=tmp)
    assert record.degenerate_count == 0
    for row in record.rows:
        assert row.tp_I == row.true_I
        assert row.fp_I == 0


def test_run_scenario_writes_summary_and_registry():
    cfg = _small(horizon=6, seeds=[1, 2])
    with tempfile.TemporaryDirectory() as tmp:
        db = RunDatabase(os.path.join(tmp, "runs.db"))
        records = run_scenario(cfg, out_root=tmp, db=db)
        assert [r.seed for r in records] == [1, 2]
        with open(os.path.join(tmp, "small", SUMMARY_FILE), encoding="utf-8") as f:
            summary = json.load(f)
        assert len(summary["runs"]) == 2
        assert "mean_abs_error_I" in summary["aggregate"]

        assert db.is_run_recorded(cfg.config_hash(), 1, "small")
        assert not db.is_run_recorded(cfg.config_hash(), 3, "small")
        runs = db.get_run_summaries()
        assert len(runs) == 2
        assert len(db.get_run_steps(runs[0]["id"])) == runs[0]["steps"]

        # re-running replaces the registered rows
        run_scenario(cfg, out_root=tmp, db=db)
        totals = db.get_total_stats()
        assert totals["total_runs"] == 2
        assert totals["scenarios"] == 1


def test_write_summary_json_without_runs():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "nested", "summary.json")
        write_summary_json([], path)
        with open(path, encoding="utf-8") as f:
            assert json.load(f) == {"runs": [], "aggregate": {}}


def test_command_line_presets():
    parser = build_parser()
    assert parser.parse_args(["run", "--preset", "paper"]).preset == "paper"
    assert parser.parse_args(["suite", "fig2", "--preset", "desk"]).preset == "desk"
    assert parser.parse_args(["simulate", "--preset", "full"]).preset == "full"
    with pytest.raises(SystemExit):
        parser.parse_args(["run", "--preset", "huge"])


def test_command_line_exit_codes():
    previous = os.environ.get("BETIS_LOG_FILE")
    with tempfile.TemporaryDirectory() as tmp:
        os.environ["BETIS_LOG_FILE"] = os.path.join(tmp, "betis.log")
        try:
            config = os.path.join(tmp, "scenario.json")
            with open(config, "w", encoding="utf-8") as f:
                json.dump({"name": "cli", "n": 150, "c0": 0.6, "horizon": 4}, f)
            assert cli_main(["run", "--config", config, "--out", tmp, "--seed", "3", "--no-registry"]) == 0
            run_dir = os.path.join(tmp, "cli", "seed_3")
            assert os.path.exists(os.path.join(run_dir, METRICS_FILE))
            assert cli_main(["filter", run_dir, "--out", os.path.join(tmp, "replayed")]) == 0
            assert _read(os.path.join(tmp, "replayed", METRICS_FILE)) == _read(os.path.join(run_dir, METRICS_FILE))

            with open(config, "w", encoding="utf-8") as f:
                json.dump({"beta": 1.5}, f)
            assert cli_main(["run", "--config", config, "--no-registry"]) == 2
            assert cli_main(["filter", os.path.join(tmp, "nowhere")]) == 2
        finally:
            if previous is None:
                os.environ.pop("BETIS_LOG_FILE", None)
            else:
                os.environ["BETIS_LOG_FILE"] = previous


tests = [
    test_empty_config_gives_standard_defaults,
    test_invalid_values_name_the_field,
    test_degraded_reports_accepted,
    test_config_files_and_presets,
    test_config_hash_ignores_bookkeeping,
    test_scenario_suites,
    test_simulation_is_reproducible,
    test_single_step_horizon,
    test_early_stop_on_extinction,
    test_contact_model_sources,
    test_run_is_deterministic_across_threads,
    test_replay_matches_in_process_metrics,
    test_perfect_information_identifies_every_symptomatic_case,
    test_run_scenario_writes_summary_and_registry,
    test_write_summary_json_without_runs,
    test_command_line_presets,
    test_command_line_exit_codes,
]


def main():
    """Run all tests."""
    print("Harness Test Suite")
    print("=" * 40)
    passed = 0
    for test in tests:
        try:
            test()
            print(f"✓ {test.__name__}")
            passed += 1
        except Exception as e:
            print(f"✗ {test.__name__}: {e!r}")
    print(f"\nTest Results: {passed}/{len(tests)} tests passed")
    return passed == len(tests)


if __name__ == "__main__":
    sys.exit(0 if main() else 1)

import json

import numpy as np
import pytest

import nfsim.harness as harness
from nfsim.cli import main as cli_main
from nfsim.errors import ConfigError
from nfsim.harness import (
    ExperimentConfig,
    export_records,
    performance_metric,
    replay,
    run_grid,
    run_simulate,
    seed_for,
)

FAST = dict(t_rest=2, t_mi=6, n_trials=4, n_agents=2, horizon=1, before_window=1, after_window=1)


def fast_cfg(**over):
    return ExperimentConfig(**{**FAST, **over})


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig()

    def test_rejects_bad_probability(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(p_effect=1.2)

    def test_rejects_bad_counts(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(n_agents=0)
        with pytest.raises(ConfigError):
            ExperimentConfig(grid_points=0)

    def test_toml_roundtrip(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text(
            "[process]\nsigma_proc = 0.5\n\n"
            "[agent]\nhorizon = 1\nb_pre_orientation = 0.0\n\n"
            "[protocol]\nn_trials = 7\n\n"
            "[experiment]\nname = \"naive\"\nmaster_seed = 99\n"
        )
        cfg = ExperimentConfig.from_file(path)
        assert cfg.sigma_proc == 0.5
        assert cfg.horizon == 1
        assert cfg.b_pre_orientation == 0.0
        assert cfg.n_trials == 7
        assert cfg.name == "naive"
        assert cfg.master_seed == 99
        # untouched keys keep their defaults
        assert cfg.p_effect == 0.99

    def test_json_accepted(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"protocol": {"t_mi": 11}, "experiment": {"jobs": 2}}))
        cfg = ExperimentConfig.from_file(path)
        assert cfg.t_mi == 11
        assert cfg.jobs == 2

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text("[agent]\ntypo_key = 1\n")
        with pytest.raises(ConfigError, match="agent.typo_key"):
            ExperimentConfig.from_file(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text("[nonsense]\nx = 1\n")
        with pytest.raises(ConfigError, match="nonsense"):
            ExperimentConfig.from_file(path)

    def test_sections_roundtrip(self):
        cfg = fast_cfg(name="roundtrip", gamma=8.0)
        again = ExperimentConfig.from_sections(cfg.to_sections())
        assert again == cfg


class TestSeedFor:
    def test_deterministic(self):
        assert seed_for(7, 3, 2) == seed_for(7, 3, 2)

    def test_collision_free_over_full_grid(self):
        for master in (0, 12345, 2**63):
            seeds = {
                seed_for(master, cell, agent)
                for cell in range(21 * 21)
                for agent in range(10)
            }
            assert len(seeds) == 21 * 21 * 10

    def test_master_changes_every_seed(self):
        cells = [(cell, agent) for cell in range(50) for agent in range(10)]
        a = [seed_for(1, c, g) for c, g in cells]
        b = [seed_for(2, c, g) for c, g in cells]
        assert all(x != y for x, y in zip(a, b))

    def test_range_checks(self):
        with pytest.raises(ConfigError):
            seed_for(1, 0, 1 << 20)
        with pytest.raises(ConfigError):
            seed_for(1, -1, 0)


class TestRunSimulate:
    def test_shapes_and_determinism(self):
        cfg = fast_cfg(master_seed=5)
        records, failures = run_simulate(cfg)
        assert not failures
        assert len(records) == 2
        assert all(len(r.trials) == 4 for r in records)
        again, _ = run_simulate(cfg)
        for r1, r2 in zip(records, again):
            for t1, t2 in zip(r1.trials, r2.trials):
                assert t1 == t2

    def test_metric_bounds_and_windows(self):
        cfg = fast_cfg()
        records, _ = run_simulate(cfg)
        for record in records:
            for metric in ("asymmetry", "feedback", "occupancy"):
                value = performance_metric(record, (0, 2), metric)
                assert -1.0 <= value <= 1.0
        with pytest.raises(ConfigError):
            performance_metric(records[0], (3, 2))

    def test_presets(self):
        records, failures, cfg = harness.run_experiment_familiar(
            n_agents=1, n_trials=2, t_rest=1, t_mi=4, horizon=1
        )
        assert cfg.b_pre_intensity == 1.0 and cfg.b_pre_orientation == 1.0
        assert cfg.sigma_proc == 1.5
        assert len(records) == 1 and len(records[0].trials) == 2
        _, _, cfg2 = harness.run_experiment_naive(n_agents=1, n_trials=2, t_rest=1, t_mi=4, horizon=1)
        assert cfg2.b_pre_orientation == 0.0
        assert cfg2.b_pre_intensity == 0.1
        assert cfg2.sigma_proc == 0.5


class TestGrid:
    def test_small_grid_completes(self):
        cfg = fast_cfg(grid_points=2, grid_trials=2, grid_min=0.0, grid_max=2.0, grid_horizon=1)
        result = run_grid(cfg)
        assert result.before.shape == (2, 2)
        assert result.after.shape == (2, 2)
        assert not np.any(np.isnan(result.before))
        assert len(result.records) == 2 * 2 * cfg.n_agents
        assert np.all(np.abs(result.before) <= 1.0)
        cells = {r.cell_index for r in result.records}
        assert cells == {0, 1, 2, 3}

    def test_grid_cell_values(self):
        cfg = fast_cfg(grid_points=3, grid_trials=2)
        result = run_grid(cfg)
        assert np.allclose(result.axis_i, [0.0, 1.0, 2.0])
        by_cell = {r.cell_index: (r.cell_i, r.cell_a) for r in result.records}
        assert by_cell[0] == (0.0, 0.0)
        assert by_cell[5] == (1.0, 2.0)

    def test_failed_run_degrades_gracefully(self, monkeypatch):
        cfg = fast_cfg(grid_points=2, grid_trials=2)
        original = harness.run_single

        def flaky(cfg_, cell_index, b_pre, agent_index, *args, **kwargs):
            if cell_index == 1 and agent_index == 0:
                raise RuntimeError("injected failure")
            return original(cfg_, cell_index, b_pre, agent_index, *args, **kwargs)

        monkeypatch.setattr(harness, "run_single", flaky)
        result = run_grid(cfg)
        assert len(result.failures) == 1
        assert result.failures[0].cell_index == 1
        assert "injected" in result.failures[0].message
        # the sweep still covers every cell
        assert not np.any(np.isnan(result.after))
        assert len(result.records) == 2 * 2 * cfg.n_agents - 1


class TestExport:
    def test_files_and_row_counts(self, tmp_path):
        cfg = fast_cfg(record_steps=True, out_dir=str(tmp_path))
        records, failures = run_simulate(cfg)
        summary = export_records(records, tmp_path, cfg, "simulate", failures, wall_time_s=1.0)
        trials = (tmp_path / "trials.csv").read_text().splitlines()
        assert trials[0] == ",".join(harness.TRIALS_COLUMNS)
        assert len(trials) - 1 == sum(len(r.trials) for r in records)
        steps = (tmp_path / "steps.csv").read_text().splitlines()
        assert len(steps) - 1 == 2 * 4 * (2 + 6)
        assert summary["n_runs"] == 2
        loaded = json.loads((tmp_path / "summary.json").read_text())
        assert loaded["config"] == json.loads(json.dumps(cfg.to_sections()))

    def test_seventeen_digit_serialization(self, tmp_path):
        cfg = fast_cfg(out_dir=str(tmp_path))
        records, _ = run_simulate(cfg)
        export_records(records, tmp_path, cfg, "simulate")
        body = (tmp_path / "trials.csv").read_text().splitlines()[1:]
        value = float(body[0].split(",")[7])  # mean_noiseless_asi column
        assert value == records[0].trials[0].mean_noiseless_asi  # bit-stable round trip

    def test_grid_matrices_have_axis_headers(self, tmp_path):
        cfg = fast_cfg(grid_points=2, grid_trials=2, out_dir=str(tmp_path))
        result = run_grid(cfg)
        export_records(result.records, tmp_path, cfg, "grid", result.failures, result)
        before = (tmp_path / "grid_before.csv").read_text().splitlines()
        assert before[0].startswith("b_pre_i/b_pre_a,")
        assert len(before) == 3  # header + one row per axis value
        header_values = [float(v) for v in before[0].split(",")[1:]]
        assert header_values == [0.0, 2.0]

    def test_replay_identical(self, tmp_path):
        out = tmp_path / "orig"
        cfg = fast_cfg(out_dir=str(out))
        records, failures = run_simulate(cfg)
        export_records(records, out, cfg, "simulate", failures)
        result = replay(out / "summary.json", tmp_path / "replayed")
        assert result.identical
        assert "trials.csv" in result.compared

    def test_replay_grid(self, tmp_path):
        out = tmp_path / "orig"
        cfg = fast_cfg(grid_points=2, grid_trials=2, out_dir=str(out))
        result = run_grid(cfg)
        export_records(result.records, out, cfg, "grid", result.failures, result)
        outcome = replay(out / "summary.json", tmp_path / "replayed")
        assert outcome.identical
        assert set(outcome.compared) == {"trials.csv", "grid_before.csv", "grid_after.csv"}


class TestDeterminismAcrossWorkers:
    def test_trials_csv_bytes_stable_under_jobs(self, tmp_path):
        outputs = []
        for jobs, sub in ((1, "a"), (3, "b")):
            out = tmp_path / sub
            cfg = fast_cfg(jobs=jobs, grid_points=2, grid_trials=2, out_dir=str(out))
            result = run_grid(cfg)
            export_records(result.records, out, cfg, "grid", result.failures, result)
            outputs.append((out / "trials.csv").read_bytes())
            outputs.append((out / "grid_after.csv").read_bytes())
        assert outputs[0] == outputs[2]
        assert outputs[1] == outputs[3]


class TestCli:
    def write_cfg(self, tmp_path, extra=""):
        path = tmp_path / "cfg.toml"
        path.write_text(
            "[protocol]\nt_rest = 2\nt_mi = 4\nn_trials = 2\n\n"
            "[agent]\nhorizon = 1\n\n"
            "[experiment]\nn_agents = 2\nbefore_window = 1\nafter_window = 1\n"
            + extra
        )
        return path

    def test_simulate_and_replay(self, tmp_path, capsys):
        cfg_path = self.write_cfg(tmp_path)
        out = tmp_path / "out"
        assert cli_main(["simulate", "--config", str(cfg_path), "--out", str(out), "--seed", "3"]) == 0
        assert (out / "trials.csv").exists()
        assert cli_main(["replay", "--summary", str(out / "summary.json")]) == 0
        captured = capsys.readouterr()
        assert "replay identical" in captured.out

    def test_steps_flag(self, tmp_path):
        cfg_path = self.write_cfg(tmp_path)
        out = tmp_path / "out"
        assert cli_main(["simulate", "--config", str(cfg_path), "--out", str(out), "--steps"]) == 0
        assert (out / "steps.csv").exists()

    def test_grid_command(self, tmp_path):
        cfg_path = self.write_cfg(tmp_path, "grid_points = 2\ngrid_trials = 2\n")
        out = tmp_path / "grid"
        assert cli_main(["grid", "--config", str(cfg_path), "--out", str(out), "--jobs", "2"]) == 0
        assert (out / "grid_before.csv").exists()
        assert (out / "grid_after.csv").exists()

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[agent]\nnope = 1\n")
        assert cli_main(["simulate", "--config", str(bad)]) == 2
        assert "nope" in capsys.readouterr().err

"""Drive the simulator CLI and render every figure from its real outputs.

Skipped when the simulator is not installed; the schema-level tests in
test_render.py cover the pipeline on synthetic files either way.
"""

import shutil
import subprocess

import pytest

from nfsim_figures.cli import main as render_main

nfsim_missing = shutil.which("nfsim") is None
pytestmark = pytest.mark.skipif(nfsim_missing, reason="nfsim CLI not installed")

SIM_CONFIG = """
[agent]
horizon = 1

[protocol]
t_rest = 2
t_mi = 6
n_trials = 12

[experiment]
n_agents = 3
master_seed = 4
"""

GRID_CONFIG = """
[agent]
horizon = 1

[protocol]
t_rest = 2
t_mi = 6

[experiment]
n_agents = 2
master_seed = 4
grid_points = 3
grid_trials = 4
before_window = 2
after_window = 2
"""


def run_cli(args):
    return subprocess.run(["nfsim", *args], capture_output=True, text=True, timeout=300)


def test_figures_from_real_outputs(tmp_path):
    sim_cfg = tmp_path / "sim.toml"
    sim_cfg.write_text(SIM_CONFIG)
    sim_out = tmp_path / "sim"
    proc = run_cli(["simulate", "--config", str(sim_cfg), "--out", str(sim_out)])
    assert proc.returncode == 0, proc.stderr

    grid_cfg = tmp_path / "grid.toml"
    grid_cfg.write_text(GRID_CONFIG)
    grid_out = tmp_path / "grid"
    proc = run_cli(["grid", "--config", str(grid_cfg), "--out", str(grid_out)])
    assert proc.returncode == 0, proc.stderr

    for figure_id, directory in (("fig3", sim_out), ("fig4", sim_out), ("fig5", grid_out)):
        out = tmp_path / f"{figure_id}.png"
        assert render_main([figure_id, "--in", str(directory), "--out", str(out)]) == 0
        assert out.exists() and out.stat().st_size > 0

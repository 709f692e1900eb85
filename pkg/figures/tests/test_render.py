import hashlib

import numpy as np
import pandas as pd
import pytest

from nfsim_figures.render import FigureError, FigureSpec, SchemaError, _load_matrix, render

TRIALS_HEADER = (
    "experiment,cell_i,cell_a,agent,trial,mean_intensity_idx,mean_orientation_idx,"
    "mean_noiseless_asi,mean_feedback,mean_vfe,mean_G_risk,mean_G_ambiguity,mean_G_novelty"
)


def write_trials(directory, n_agents=3, n_trials=10, experiment="familiar"):
    rng = np.random.default_rng(0)
    lines = [TRIALS_HEADER]
    for agent in range(n_agents):
        for trial in range(n_trials):
            progress = trial / max(n_trials - 1, 1)
            lines.append(
                ",".join(
                    map(
                        str,
                        [
                            experiment,
                            1.0,
                            1.0,
                            agent,
                            trial,
                            1.0 + progress + rng.normal(0, 0.1),
                            2.0 + 1.5 * progress + rng.normal(0, 0.1),
                            0.1 + 0.7 * progress,
                            1.5 + 2.0 * progress,
                            1.2,
                            3.0,
                            1.0,
                            0.4,
                        ],
                    )
                )
            )
    (directory / "trials.csv").write_text("\n".join(lines) + "\n")


def write_grid(directory, n=5):
    axis = np.linspace(0.0, 2.0, n)
    rng = np.random.default_rng(1)
    for name, base in (("grid_before.csv", 0.2), ("grid_after.csv", 0.7)):
        rows = ["b_pre_i/b_pre_a," + ",".join(map(str, axis))]
        for value in axis:
            cells = base + 0.1 * rng.random(n)
            rows.append(str(value) + "," + ",".join(map(str, cells)))
        (directory / name).write_text("\n".join(rows) + "\n")


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestTrialFigures:
    def test_fig3_renders(self, tmp_path):
        write_trials(tmp_path, n_trials=10)
        out = tmp_path / "fig3.png"
        render(FigureSpec("fig3", tmp_path, out))
        assert out.exists()
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_fig4_renders_long_training(self, tmp_path):
        write_trials(tmp_path, n_trials=100, experiment="naive")
        out = tmp_path / "fig4.png"
        render(FigureSpec("fig4", tmp_path, out, shade_window=10))
        assert out.exists()

    def test_rerender_byte_stable(self, tmp_path):
        write_trials(tmp_path)
        out = tmp_path / "fig3.png"
        render(FigureSpec("fig3", tmp_path, out))
        first = digest(out)
        render(FigureSpec("fig3", tmp_path, out))
        assert digest(out) == first

    def test_inputs_left_untouched(self, tmp_path):
        write_trials(tmp_path)
        before = digest(tmp_path / "trials.csv")
        render(FigureSpec("fig3", tmp_path, tmp_path / "out.png"))
        assert digest(tmp_path / "trials.csv") == before

    def test_missing_column_named(self, tmp_path):
        write_trials(tmp_path)
        frame = pd.read_csv(tmp_path / "trials.csv").drop(columns=["mean_feedback"])
        frame.to_csv(tmp_path / "trials.csv", index=False)
        with pytest.raises(SchemaError, match="mean_feedback"):
            render(FigureSpec("fig3", tmp_path, tmp_path / "out.png"))

    def test_empty_input_rejected(self, tmp_path):
        (tmp_path / "trials.csv").write_text(TRIALS_HEADER + "\n")
        with pytest.raises(FigureError, match="no rows"):
            render(FigureSpec("fig3", tmp_path, tmp_path / "out.png"))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(FigureError, match="trials.csv"):
            render(FigureSpec("fig3", tmp_path, tmp_path / "out.png"))


class TestGridFigure:
    def test_fig5_renders(self, tmp_path):
        write_grid(tmp_path, n=5)
        out = tmp_path / "fig5.png"
        render(FigureSpec("fig5", tmp_path, out))
        assert out.exists()

    def test_matrix_loader_shapes(self, tmp_path):
        write_grid(tmp_path, n=21)
        values, axis_i, axis_a = _load_matrix(tmp_path / "grid_before.csv")
        assert values.shape == (21, 21)
        assert axis_i[0] == 0.0 and axis_i[-1] == 2.0
        assert len(axis_a) == 21

    def test_mismatched_axes_rejected(self, tmp_path):
        write_grid(tmp_path, n=5)
        write_grid(tmp_path, n=5)
        # shrink only the after matrix
        lines = (tmp_path / "grid_after.csv").read_text().splitlines()
        (tmp_path / "grid_after.csv").write_text("\n".join(lines[:4]) + "\n")
        with pytest.raises(SchemaError, match="mismatched"):
            render(FigureSpec("fig5", tmp_path, tmp_path / "out.png"))

    def test_missing_grid_file(self, tmp_path):
        with pytest.raises(FigureError, match="grid_before"):
            render(FigureSpec("fig5", tmp_path, tmp_path / "out.png"))


def test_bad_figure_id_rejected(tmp_path):
    with pytest.raises(FigureError):
        FigureSpec("fig9", tmp_path, tmp_path / "x.png")

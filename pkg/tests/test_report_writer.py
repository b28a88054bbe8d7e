import json
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from utils.errors import DatasetError
from utils.maze import MazeDefinition
from utils.report_writer import (
    emit_dataset,
    emit_plot,
    emit_report,
    emit_trajectory,
    load_dataset,
    load_report,
    load_trajectory,
    spec_boundary,
    trace_level_set,
)
from utils.specs import NormalizationStats, make_ellipse, make_roof, make_speed_dependent_roof

HEADER = {"version": "test", "config_hash": "abc123", "seed": 7}


def test_trajectory_table_keeps_values_and_header(tmp_path):
    traj = np.random.default_rng(0).normal(size=(5, 3))
    path = emit_trajectory(traj, tmp_path / "out" / "traj.csv", HEADER)
    assert path.read_text().startswith("# ")
    loaded, header = load_trajectory(path)
    assert np.array_equal(loaded, traj)
    assert header == HEADER


def test_dataset_table_restores_normalized_values(tmp_path):
    stats = NormalizationStats(lo=np.array([0.0, 0.0]), hi=np.array([4.0, 2.0]))
    dataset = np.random.default_rng(1).uniform(-1, 1, size=(3, 4, 2))
    path = emit_dataset(dataset, stats, tmp_path / "dataset.csv", HEADER)
    loaded, loaded_stats, header = load_dataset(path)
    assert loaded == pytest.approx(dataset, abs=1e-12)
    assert np.array_equal(loaded_stats.hi, stats.hi)
    assert header["seed"] == 7 and header["n_traj"] == 3 and header["horizon"] == 3


def test_loading_a_missing_or_foreign_table(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "absent.csv")
    path = emit_trajectory(np.zeros((2, 2)), tmp_path / "traj.csv")
    with pytest.raises(DatasetError):
        load_dataset(path)


def test_report_replaces_nan_with_null(tmp_path):
    path = emit_report({"spec_min": float("nan"), "nested": [1.0, float("inf")]}, tmp_path / "report.json", HEADER)
    document = json.loads(path.read_text())
    assert document["header"] == HEADER
    assert document["report"] == {"spec_min": None, "nested": [1.0, None]}
    assert load_report(path) == document


def test_marching_squares_traces_the_unit_circle():
    segments = trace_level_set(lambda pts: np.sum(pts**2, axis=1) - 1.0, (-2.0, 2.0, -2.0, 2.0), resolution=200)
    radii = np.linalg.norm(segments.reshape(-1, 2), axis=1)
    assert np.all(np.abs(radii - 1.0) < 1e-3)
    length = np.sum(np.linalg.norm(segments[:, 1] - segments[:, 0], axis=1))
    assert length == pytest.approx(2 * np.pi, rel=1e-3)


def test_level_set_without_crossings_is_empty():
    segments = trace_level_set(lambda pts: np.ones(len(pts)), (0.0, 1.0, 0.0, 1.0), resolution=10)
    assert segments.shape == (0, 2, 2)


def test_roof_boundary_is_horizontal():
    segments = spec_boundary(make_roof(0.23, dim=1), (-1.0, 1.0, -1.0, 1.0), resolution=40)
    assert len(segments) > 0
    assert segments[..., 1] == pytest.approx(np.full(segments.shape[:2], 0.23))

    # A speed roof is drawn at its terminal form.
    speed = spec_boundary(make_speed_dependent_roof(0.23, phi=0.5, dim=1), (-1.0, 1.0, -1.0, 1.0), resolution=40)
    assert np.array_equal(speed, segments)


def test_plot_is_written_as_svg(tmp_path):
    maze = MazeDefinition.from_dict({"name": "room", "bounds": [0, 4, 0, 4], "grid": ["....", ".#..", "....", "...."]})
    specs = [make_ellipse([2.0, 2.0], [0.5, 0.5])]
    traj = np.linspace([0.5, 0.5], [3.5, 3.5], 8)
    path = emit_plot(maze, [traj], specs, tmp_path / "plots" / "plan.svg", HEADER, labels=["ros"], resolution=50)
    text = path.read_text()
    assert "<svg" in text
    assert "abc123" in text

    empty = emit_plot(maze, [], [], tmp_path / "empty.svg")
    assert "<svg" in empty.read_text()

import json
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from utils.data_loader import (
    DATA_DIR,
    DEFAULT_CONFIG,
    load_maze,
    load_run_config,
    load_run_inputs,
    load_spec_set,
    output_path,
    resolve_data_path,
)
from utils.errors import ConfigError
from utils.specs import SpecKind


def test_defaults_without_a_file():
    config = load_run_config()
    assert config["schedule"] == DEFAULT_CONFIG["schedule"]
    assert config["invariance"]["on_qp_failure"] == "abort"
    assert config["_config_dir"] == str(DATA_DIR)


def test_shipped_maze_config():
    config = load_run_config(DATA_DIR / "configs" / "maze_default.json")
    maze, specs = load_run_inputs(config)
    assert [s.kind for s in specs] == [SpecKind.ELLIPSE, SpecKind.QUARTIC_SUPERELLIPSE]
    assert [s.group for s in specs] == ["simple", "complex"]
    assert maze.grid.shape[0] > 0
    # Sections missing from the file are filled from the defaults.
    assert config["trap"] == DEFAULT_CONFIG["trap"]


def test_dotted_overrides():
    config = load_run_config(overrides={"invariance.n_extra": 3, "seed": 9, "plan.method": "tvs", "guidance.scale": None})
    assert config["invariance"]["n_extra"] == 3
    assert config["invariance"]["w_max"] == DEFAULT_CONFIG["invariance"]["w_max"]
    assert config["seed"] == 9
    assert config["plan"]["method"] == "tvs"
    assert config["guidance"]["scale"] == DEFAULT_CONFIG["guidance"]["scale"]


def test_invalid_configs(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(overrides={"plan.method": "teleport"})
    with pytest.raises(ConfigError):
        load_run_config(overrides={"methods": []})
    with pytest.raises(ConfigError):
        load_run_config(overrides={"benchmark.episodes": 0})
    with pytest.raises(ConfigError, match="snapshots"):
        load_run_config(overrides={"plan.snapshots": -1})
    with pytest.raises(ConfigError):
        load_run_config(overrides={"seed": "zero"})
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.json")

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_run_config(broken)

    listed = tmp_path / "listed.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_run_config(listed)


def test_single_method_string_becomes_a_list():
    assert load_run_config(overrides={"methods": "ros"})["methods"] == ["ros"]


def test_resolve_data_path(tmp_path):
    assert resolve_data_path("mazes/default_maze.json") == DATA_DIR / "mazes" / "default_maze.json"
    local = tmp_path / "mazes" / "default_maze.json"
    local.parent.mkdir()
    local.write_text("{}")
    assert resolve_data_path("mazes/default_maze.json", tmp_path) == local
    assert resolve_data_path(local) == local
    with pytest.raises(ConfigError):
        resolve_data_path("mazes/absent.json", tmp_path)


def test_output_path():
    config = {"output_dir": "runs/a"}
    assert output_path(config, "report.json") == Path("runs/a/report.json")
    assert output_path(config, Path("/tmp/x.json")) == Path("/tmp/x.json")


def test_inline_spec_entries():
    specs = load_spec_set([{"kind": "roof", "h_r": 1.0, "dim": 1}, {"kind": "joint_box", "x_min": [-1], "x_max": [1], "dims": [0]}])
    assert len(specs) == 3
    with pytest.raises(ConfigError):
        load_spec_set([{"kind": "ellipse", "center": [0.0, 0.0], "axes": [-1.0, 1.0]}])


def test_bad_maze_document():
    with pytest.raises(ConfigError):
        load_maze({"name": "broken", "bounds": [0, 1, 0, 1], "grid": ["#"]})


def test_config_relative_references(tmp_path):
    (tmp_path / "specs.json").write_text(json.dumps({"specs": [{"kind": "roof", "h_r": 2.0, "dim": 1}]}))
    (tmp_path / "run.json").write_text(json.dumps({"maze": "mazes/open_room.json", "specs": "specs.json"}))
    maze, specs = load_run_inputs(load_run_config(tmp_path / "run.json"))
    assert [s.kind for s in specs] == [SpecKind.HALF_SPACE]
    assert maze.name


def test_shipped_spec_sets():
    joints = load_spec_set("specs/arm_joints.json")
    assert len(joints) == 28
    assert {s.kind for s in joints} == {SpecKind.BOX, SpecKind.SPEED_DEPENDENT_BOX}
    roofs = load_spec_set("specs/locomotion_roof.json")
    assert [s.group for s in roofs] == ["simple", "complex"]
    assert len(load_spec_set("specs/trap_pocket.json")) == 2

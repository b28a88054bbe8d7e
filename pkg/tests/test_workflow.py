import json
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from cli import main
from nodes import COMMANDS, NODE_CLASS_MAPPINGS
from nodes.benchmark_node import BenchmarkReport, MethodSummary, run_benchmark
from support_nodes.trap_node import local_trap_scenario
from utils.data_loader import DATA_DIR, load_run_config
from utils.errors import InvalidParameterError
from utils.planning import load_context, run_method, seeded

pytestmark = pytest.mark.integration

SMALL = {
    "dataset.n_traj": 16,
    "dataset.horizon": 8,
    "schedule.n_steps": 6,
    "schedule.beta_min": 1e-3,
    "schedule.beta_max": 0.3,
    "model.hidden_width": 16,
    "model.n_hidden": 1,
    "model.time_dim": 4,
    "training.epochs": 2,
    "training.batch_size": 8,
    "benchmark.episodes": 2,
    "invariance.n_extra": 2,
    "trap.seeds": 2,
}


def _run(name, config):
    node = NODE_CLASS_MAPPINGS[name]()
    return getattr(node, node.FUNCTION)(config)


@pytest.fixture(scope="module")
def maze_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("maze")
    config = load_run_config(DATA_DIR / "configs" / "maze_default.json", {**SMALL, "output_dir": str(out)})
    _run("GenerateDatasetNode", config)
    _run("TrainDenoiserNode", config)
    return config


def test_registry_covers_every_command():
    assert set(COMMANDS.values()) <= set(NODE_CLASS_MAPPINGS)
    for name in COMMANDS.values():
        node = NODE_CLASS_MAPPINGS[name]
        assert node.INPUT_TYPES()["required"]["config"][0] == "DICT"
        assert len(node.RETURN_TYPES) == len(node.RETURN_NAMES)


def test_dataset_and_checkpoint_are_written(maze_run):
    out = Path(maze_run["output_dir"])
    assert (out / "maze_dataset.csv").is_file()
    assert (out / "maze_model.npz").is_file()
    ctx = load_context(maze_run)
    assert ctx.model.traj_shape == (9, 2)
    assert ctx.sched.n_steps == 6
    assert ctx.median_gap() > 0


def test_plan_node_writes_every_artifact(maze_run):
    traj_path, plot_path, summary = _run("PlanTrajectoryNode", maze_run)
    out = Path(maze_run["output_dir"])
    assert Path(traj_path).is_file() and Path(plot_path).is_file()
    assert (out / "diagnostics_ros.jsonl").is_file()
    assert (out / "plan_ros.json").is_file()
    assert summary["spec_min"] >= -1e-5
    assert 0.0 <= summary["score"] <= 1.0
    assert summary["steps_plot"] == str(out / "plan_ros_steps.svg")
    assert Path(summary["steps_plot"]).is_file()


def test_plan_node_without_snapshots_skips_the_steps_plot(maze_run):
    config = {**maze_run, "plan": {**maze_run["plan"], "method": "tvs", "snapshots": 0}}
    _, _, summary = _run("PlanTrajectoryNode", config)
    assert summary["steps_plot"] is None
    assert not (Path(maze_run["output_dir"]) / "plan_tvs_steps.svg").exists()


def test_step_time_comes_from_the_denoising_steps(maze_run):
    ctx = load_context(maze_run)
    cond = ctx.conditioning(np.array([0.5, 6.5]), np.array([7.5, 3.5]))
    run = run_method(ctx, "ros", cond, seeded(maze_run, 0, 1))
    assert run.step_time > 0
    assert run.step_time == pytest.approx(np.mean([d.wall_time for d in run.diags[1:]]))
    assert run_method(ctx, "truncate", cond, seeded(maze_run, 0, 1)).step_time > 0


def test_benchmark_is_seeded_and_invariance_methods_are_safe(maze_run):
    ctx = load_context(maze_run)
    first = run_benchmark(maze_run, ctx)
    second = run_benchmark(maze_run, ctx)
    assert [m.method for m in first.methods] == list(maze_run["methods"])
    for a, b in zip(first.methods, second.methods):
        np.testing.assert_array_equal(a.episode_spec_min, b.episode_spec_min)
    for method in ("ros", "res", "tvs"):
        assert first.row(method).violating_episodes == 0
    assert first.row("off").overhead_vs_off == pytest.approx(1.0)
    assert all(m.step_time_mean > 0 for m in first.methods)


def test_benchmark_checks_the_step_logs(maze_run):
    report = run_benchmark(maze_run)
    assert set(report.row("ros").log_violations) == {"forward_invariance", "exponential_bound", "terminal", "unconverged_steps"}
    assert set(report.row("res").log_violations) == {"terminal", "unconverged_steps"}
    assert set(report.row("tvs").log_violations) == {"tvs", "terminal", "unconverged_steps"}
    for method in ("ros", "res", "tvs"):
        assert all(count == 0 for count in report.row(method).log_violations.values()), method
    for method in ("off", "truncate", "guided", "guided_eps"):
        assert report.row(method).log_violations == {}


def test_benchmark_report_rejects_non_positive_step_times():
    summary = MethodSummary(
        method="ros",
        s_spec_min=0.1,
        s_spec_mean=0.2,
        c_spec_min=0.1,
        c_spec_mean=0.2,
        score_mean=1.0,
        score_std=0.0,
        step_time_mean=0.0,
        n_episodes=1,
        violating_episodes=0,
    )
    with pytest.raises(InvalidParameterError, match="step time"):
        BenchmarkReport(seed=0, n_episodes=1, config_hash="0" * 16, methods=[summary])
    summary.step_time_mean = 1e-3
    assert BenchmarkReport(seed=0, n_episodes=1, config_hash="0" * 16, methods=[summary]).row("ros") is summary


def test_benchmark_node_report(maze_run):
    path, report = _run("BenchmarkNode", maze_run)
    document = json.loads(Path(path).read_text())
    assert document["header"]["seed"] == maze_run["seed"]
    assert len(document["report"]["methods"]) == len(report["methods"])
    rows = {row["method"]: row for row in document["report"]["methods"]}
    assert rows["ros"]["log_violations"]["forward_invariance"] == 0
    assert rows["ros"]["step_time_mean"] > 0


@pytest.fixture(scope="module")
def trap_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("trap")
    overrides = {**SMALL, "output_dir": str(out)}
    config = load_run_config(DATA_DIR / "configs" / "trap_default.json", overrides)
    _run("GenerateDatasetNode", config)
    _run("TrainDenoiserNode", config)
    return config


def test_trap_scenario_without_specs_traps_nothing(trap_run):
    config = {**trap_run, "specs": []}
    report, plots = local_trap_scenario(config)
    assert set(report["methods"]) == {"ros", "res", "tvs"}
    for method, row in report["methods"].items():
        assert row["trapped_total"] == 0
        assert row["spec_min"] is None
        assert Path(plots[method]).is_file()


def test_trap_node_report(trap_run):
    path, report, plots = _run("LocalTrapNode", trap_run)
    assert Path(path).is_file()
    assert report["gap_threshold"] > 0
    for row in report["methods"].values():
        assert len(row["trapped_per_seed"]) == 2
    assert report["methods"]["ros"]["unsafe_seeds"] == 0
    assert report["methods"]["ros"]["spec_min"] >= -1e-5


DESK = {
    "dataset.n_traj": 300,
    "dataset.horizon": 32,
    "schedule.n_steps": 64,
    "schedule.beta_min": 1e-4,
    "schedule.beta_max": 0.15,
    "training.epochs": 150,
    "invariance.n_extra": 20,
}


@pytest.fixture(scope="module")
def desk_maze(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_maze")
    overrides = {
        **DESK,
        "output_dir": str(out),
        "benchmark.episodes": 10,
        "benchmark.start": [4.5, 0.5],
        "benchmark.goal": [4.5, 7.5],
    }
    config = load_run_config(DATA_DIR / "configs" / "maze_default.json", overrides)
    _run("GenerateDatasetNode", config)
    _run("TrainDenoiserNode", config)
    return config


def _mean_violation(summary):
    return float(np.mean([max(0.0, -v) for v in summary.episode_spec_min]))


@pytest.mark.slow
def test_desk_benchmark_orders_the_methods(desk_maze):
    report = run_benchmark(desk_maze)
    off = report.row("off")
    assert off.violating_episodes >= off.n_episodes / 2
    assert report.row("truncate").s_spec_min >= -1e-6
    for method in ("guided", "guided_eps"):
        assert _mean_violation(report.row(method)) < _mean_violation(off), method
    for method in ("ros", "res", "tvs"):
        row = report.row(method)
        assert row.violating_episodes == 0
        assert all(count == 0 for count in row.log_violations.values()), method
        assert row.overhead_vs_off < 50, method


@pytest.mark.slow
def test_desk_trap_relaxed_modes_trap_no_more_than_robust(tmp_path):
    overrides = {**DESK, "output_dir": str(tmp_path), "trap.seeds": 20}
    config = load_run_config(DATA_DIR / "configs" / "trap_default.json", overrides)
    _run("GenerateDatasetNode", config)
    _run("TrainDenoiserNode", config)
    report, _ = local_trap_scenario(config)
    rows = report["methods"]
    assert rows["res"]["trapped_total"] <= rows["ros"]["trapped_total"]
    assert rows["tvs"]["trapped_total"] <= rows["ros"]["trapped_total"]
    assert rows["ros"]["unsafe_seeds"] == 0


@pytest.fixture
def cli_config(tmp_path):
    config = {
        "maze": "mazes/default_maze.json",
        "specs": "specs/maze_obstacles.json",
        "output_dir": str(tmp_path / "out"),
        "methods": ["off", "ros"],
        "dataset": {"n_traj": 8, "horizon": 6},
        "schedule": {"n_steps": 4, "beta_min": 1e-3, "beta_max": 0.3},
        "model": {"hidden_width": 8, "n_hidden": 1, "time_dim": 4},
        "training": {"epochs": 1, "batch_size": 4},
        "invariance": {"n_extra": 1},
        "plan": {"start": [0.5, 6.5], "goal": [7.5, 3.5]},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(config))
    return path


def test_cli_full_run(cli_config, capsys):
    assert main(["gen-data", "--config", str(cli_config)]) == 0
    assert json.loads(capsys.readouterr().out)["n_traj"] == 8
    assert main(["train", "--config", str(cli_config)]) == 0
    capsys.readouterr()
    assert main(["plan", "--config", str(cli_config), "--method", "tvs"]) == 0
    assert json.loads(capsys.readouterr().out)["summary"]["method"] == "tvs"
    assert main(["bench", "--config", str(cli_config), "--episodes", "1"]) == 0
    report = json.loads(capsys.readouterr().out)["report"]
    assert report["n_episodes"] == 1
    assert [m["method"] for m in report["methods"]] == ["off", "ros"]


def test_cli_errors(cli_config, tmp_path, capsys):
    assert main(["plan", "--config", str(cli_config)]) == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "CheckpointError"

    assert main(["bench", "--config", str(tmp_path / "absent.json")]) == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "ConfigError"

    assert main(["bench", "--config", str(cli_config), "--method", "teleport"]) == 1
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record == {"error": "ConfigError", "message": record["message"], "command": "bench"}

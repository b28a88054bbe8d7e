import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .common import apply_defaults, apply_overrides, load_json_file
from .errors import ConfigError, InvalidParameterError
from .maze import MazeDefinition
from .specs import BarrierSpec, specs_from_entry

logger = logging.getLogger(__name__)

ROOT_DIR = Path(__file__).resolve().parents[1]
DATA_DIR = ROOT_DIR / "data"

METHODS = ("off", "truncate", "guided", "guided_eps", "ros", "res", "tvs")

DEFAULT_CONFIG: Dict[str, Any] = {
    "maze": "mazes/default_maze.json",
    "specs": "specs/maze_obstacles.json",
    "seed": 0,
    "output_dir": "outputs",
    "progress": False,
    "dataset": {"n_traj": 1000, "horizon": 48, "jitter": 0.02, "path": "maze_dataset.csv"},
    "schedule": {"n_steps": 256, "beta_min": 1e-4, "beta_max": 4e-2},
    "model": {"hidden_width": 256, "n_hidden": 3, "time_dim": 32},
    "training": {"epochs": 200, "lr": 1e-3, "batch_size": 64, "optimizer": "adam", "checkpoint": "maze_model.npz"},
    "invariance": {
        "eps_classk": 1.0,
        "delta_tau": 1.0,
        "n_extra": 50,
        "w_max": 1.0,
        "class_k": "linear",
        "gamma_margin": 0.0,
        "qp_tol": 1e-9,
        "qp_max_iter": 10000,
        "auto_relax_weight": 1.0,
        "noise_injection": True,
        "extra_step_noise": False,
        "on_qp_failure": "abort",
        "qp_dump_dir": None,
    },
    "guidance": {"scale": 0.5, "epsilon_band": 0.1},
    "methods": list(METHODS),
    "plan": {"method": "ros", "start": None, "goal": None, "snapshots": 5},
    "benchmark": {
        "episodes": 100,
        "r_goal": 0.5,
        "goal_window": 3,
        "start_margin": 0.05,
        "timing": True,
        "workers": 1,
        "report": "benchmark_report.json",
    },
    "trap": {"seeds": 20, "methods": ["ros", "res", "tvs"], "band": 0.05, "gap_factor": 5.0, "report": "trap_report.json"},
}

_SECTIONS = ("dataset", "schedule", "model", "training", "invariance", "guidance", "plan", "benchmark", "trap")


def resolve_data_path(ref: Union[str, Path], base_dir: Optional[Path] = None) -> Path:
    """
    Resolve a file reference from a config.

    Absolute paths are used as-is; relative ones are tried against the config's directory,
    then the repository ``data/`` directory.
    """
    path = Path(ref)
    if path.is_absolute():
        return path
    for base in (base_dir, DATA_DIR):
        if base is not None and (base / path).exists():
            return base / path
    raise ConfigError(f"cannot resolve '{ref}' (looked in {base_dir} and {DATA_DIR})")


def output_path(config: Dict[str, Any], name: Union[str, Path]) -> Path:
    """A file under the run's output directory (absolute names pass through)."""
    path = Path(name)
    if path.is_absolute():
        return path
    return Path(config["output_dir"]) / path


def validate_config(config: Dict[str, Any]) -> Dict[str, Any]:
    for section in _SECTIONS:
        if not isinstance(config.get(section), dict):
            raise ConfigError(f"config section '{section}' must be an object")
    methods = config.get("methods")
    if isinstance(methods, str):
        methods = [methods]
        config["methods"] = methods
    if not isinstance(methods, list) or not methods:
        raise ConfigError("'methods' must be a non-empty list")
    unknown = [m for m in methods + [config["plan"]["method"]] if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown method(s) {unknown}; expected one of {list(METHODS)}")
    if int(config["benchmark"]["episodes"]) < 1:
        raise ConfigError("benchmark.episodes must be >= 1")
    if int(config["plan"]["snapshots"]) < 0:
        raise ConfigError("plan.snapshots must be >= 0")
    if not isinstance(config.get("seed"), int):
        raise ConfigError(f"seed must be an integer, got {config.get('seed')!r}")
    return config


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Load a run configuration.

    The document is merged over ``DEFAULT_CONFIG`` (missing keys filled), dotted-key
    ``overrides`` are applied, and the result is validated. ``_config_dir`` records
    where relative references are resolved from.

    Raises:
        ConfigError: unreadable file or invalid values.
    """
    data: Dict[str, Any] = {}
    base_dir = DATA_DIR
    if path is not None:
        path = Path(path)
        data = load_json_file(path, strict=True)
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        base_dir = path.resolve().parent
    config = apply_defaults(data, DEFAULT_CONFIG)
    config = apply_overrides(config, overrides or {})
    config["_config_dir"] = str(base_dir)
    logger.debug(f"Loaded config from {path or '<defaults>'}")
    return validate_config(config)


def load_spec_set(ref: Union[str, Path, List[Dict[str, Any]]], base_dir: Optional[Path] = None) -> List[BarrierSpec]:
    """Specs from a spec-set document (``{"specs": [...]}``) or an inline list of entries."""
    if isinstance(ref, list):
        entries = ref
    else:
        document = load_json_file(resolve_data_path(ref, base_dir), strict=True)
        entries = document.get("specs", []) if isinstance(document, dict) else document
    if not isinstance(entries, list):
        raise ConfigError(f"spec set '{ref}' must hold a list of entries")
    try:
        return [spec for entry in entries for spec in specs_from_entry(entry)]
    except InvalidParameterError as e:
        raise ConfigError(f"bad spec set '{ref}': {e}") from e


def load_maze(ref: Union[str, Path, Dict[str, Any]], specs: Optional[List[BarrierSpec]] = None, base_dir: Optional[Path] = None) -> MazeDefinition:
    document = ref if isinstance(ref, dict) else load_json_file(resolve_data_path(ref, base_dir), strict=True)
    try:
        return MazeDefinition.from_dict(document, specs)
    except InvalidParameterError as e:
        raise ConfigError(f"bad maze '{ref if not isinstance(ref, dict) else document.get('name')}': {e}") from e


def load_run_inputs(config: Dict[str, Any]):
    """(maze, world-coordinate specs) named by a run config."""
    base_dir = Path(config.get("_config_dir", DATA_DIR))
    specs = load_spec_set(config["specs"], base_dir) if config.get("specs") else []
    maze = load_maze(config["maze"], specs, base_dir)
    return maze, specs

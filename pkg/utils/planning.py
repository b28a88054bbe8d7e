"""
Shared plumbing for the workflow nodes: loading a trained planner and running one
sampling method on one start/goal pair.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .baselines import GuidanceConfig, guided_sample, truncate_sample
from .common import make_rng
from .data_loader import load_run_inputs, output_path
from .diffusion import Conditioning, DenoiserModel, DiffusionSchedule, load_checkpoint
from .errors import CheckpointError, DatasetError, InvalidParameterError
from .invariance import InvarianceConfig, Mode, StepDiagnostics, safe_sample
from .maze import MazeDefinition, median_step_gap, sample_free_point
from .report_writer import load_dataset
from .specs import BarrierSpec, NormalizationStats, normalize_spec

logger = logging.getLogger(__name__)

INVARIANCE_METHODS = {m.value for m in Mode}


@dataclass
class PlanContext:
    """A trained planner together with the maze and specs it is evaluated on."""

    config: Dict[str, Any]
    maze: MazeDefinition
    world_specs: List[BarrierSpec]
    model: DenoiserModel
    sched: DiffusionSchedule
    stats: NormalizationStats
    checkpoint: Dict[str, Any] = field(default_factory=dict)
    specs: List[BarrierSpec] = field(init=False)

    def __post_init__(self):
        self.specs = [normalize_spec(spec, self.stats) for spec in self.world_specs]

    def conditioning(self, start: np.ndarray, goal: np.ndarray) -> Conditioning:
        """Pins for world-coordinate endpoints."""
        return Conditioning(self.stats.normalize(start), self.stats.normalize(goal))

    def median_gap(self) -> float:
        """Median consecutive-state gap of the training data (normalized units)."""
        gap = self.checkpoint.get("extra", {}).get("median_step_gap")
        if gap is not None:
            return float(gap)
        dataset_file = output_path(self.config, self.config["dataset"]["path"])
        if not dataset_file.is_file():
            raise DatasetError(f"median step gap unknown: no checkpoint entry and no dataset at {dataset_file}")
        dataset, _, _ = load_dataset(dataset_file)
        return median_step_gap(dataset)


def load_context(config: Dict[str, Any]) -> PlanContext:
    """
    Load the checkpoint, maze and specs a run config names.

    Raises:
        CheckpointError: the checkpoint is missing or carries no normalization stats.
    """
    maze, specs = load_run_inputs(config)
    path = output_path(config, config["training"]["checkpoint"])
    model, sched, stats, header = load_checkpoint(path)
    if stats is None:
        raise CheckpointError(f"checkpoint {path} has no normalization stats")
    if stats.dim != model.state_dim:
        raise CheckpointError(f"checkpoint {path} stats cover {stats.dim} dims, model has {model.state_dim}")
    return PlanContext(config, maze, specs, model, sched, stats, header)


@dataclass
class MethodRun:
    traj: np.ndarray
    diags: Optional[List[StepDiagnostics]]
    step_time: float


def run_method(
    ctx: PlanContext,
    method: str,
    cond: Optional[Conditioning],
    rng: np.random.Generator,
    snapshot_steps: Sequence[int] = (),
) -> MethodRun:
    """
    Sample one plan with the named method; ``traj`` is in normalized coordinates.

    ``snapshot_steps`` keeps tau^j of those steps in the diagnostics (invariance modes only).

    ``step_time`` is the mean wall time of one ``safe_denoise_step`` call for the
    invariance modes (projection included) and the chain time over its number of
    steps for the baselines.
    """
    inv = ctx.config["invariance"]
    started = time.perf_counter()
    diags = None
    if method in INVARIANCE_METHODS:
        icfg = InvarianceConfig.from_dict(inv, mode=method, snapshot_steps=tuple(snapshot_steps))
        traj, diags = safe_sample(ctx.model, ctx.sched, cond, ctx.specs, icfg, rng)
        return MethodRun(traj=traj, diags=diags, step_time=float(np.mean([d.wall_time for d in diags[1:]])))
    if method == "truncate":
        traj = truncate_sample(ctx.model, ctx.sched, cond, ctx.specs, rng, add_noise=inv.get("noise_injection", True))
    elif method in ("guided", "guided_eps"):
        guidance = ctx.config["guidance"]
        band = guidance.get("epsilon_band", 0.0) if method == "guided_eps" else 0.0
        gcfg = GuidanceConfig(scale=guidance.get("scale", 1.0), epsilon_band=band)
        traj = guided_sample(ctx.model, ctx.sched, cond, ctx.specs, gcfg, rng, add_noise=inv.get("noise_injection", True))
    else:
        raise InvalidParameterError(f"unknown method '{method}'")
    elapsed = time.perf_counter() - started
    return MethodRun(traj=traj, diags=diags, step_time=elapsed / ctx.sched.n_steps)


def endpoints(ctx: PlanContext, rng: np.random.Generator, section: str = "plan", margin: float = 0.0):
    """World start/goal from a config section, sampled outside every spec when unset."""
    cfg = ctx.config.get(section, {})
    start, goal = cfg.get("start"), cfg.get("goal")
    start = np.asarray(start, dtype=np.float64) if start is not None else sample_free_point(ctx.maze, rng, ctx.world_specs, margin)
    goal = np.asarray(goal, dtype=np.float64) if goal is not None else sample_free_point(ctx.maze, rng, ctx.world_specs, margin)
    return start, goal


def seeded(config: Dict[str, Any], *stream: int) -> np.random.Generator:
    return make_rng([int(config["seed"]), *stream])

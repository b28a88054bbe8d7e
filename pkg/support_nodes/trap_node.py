"""
Local-trap scenario: plans through a pocket formed by overlapping obstacles.

States pinned against a pocket boundary show up as a large jump next to a state
sitting in a thin band around b = 0; the scenario counts those for each method on
identical seeds and overlays every plan of a method in one plot.
"""

import logging
from typing import Any, Dict, Optional, Tuple

import numpy as np

from utils.common import artifact_header
from utils.data_loader import output_path
from utils.metrics import DEFAULT_TOL, spec_satisfaction, trapped_points
from utils.planning import PlanContext, endpoints, load_context, run_method, seeded
from utils.report_writer import emit_plot, emit_report

logger = logging.getLogger(__name__)

TRAP_CATEGORY = "BarrierDiffuser/Evaluation"


def local_trap_scenario(config: Dict[str, Any], ctx: Optional[PlanContext] = None) -> Tuple[Dict[str, Any], Dict[str, str]]:
    """
    Run the trap methods (``trap.methods``) on ``trap.seeds`` shared seeds.

    Returns:
        (report, plot path per method)
    """
    ctx = ctx or load_context(config)
    section = config["trap"]
    methods = list(section["methods"])
    n_seeds = int(section["seeds"])
    threshold = float(section["gap_factor"]) * ctx.median_gap()
    band = float(section["band"])
    header = artifact_header(config, config["seed"])

    start, goal = endpoints(ctx, seeded(config, 0), "plan", float(config["benchmark"]["start_margin"]))
    cond = ctx.conditioning(start, goal)
    report: Dict[str, Any] = {"gap_threshold": threshold, "band": band, "start": start, "goal": goal, "methods": {}}
    plots: Dict[str, str] = {}
    for method in methods:
        counts, mins, worlds = [], [], []
        for s in range(n_seeds):
            run = run_method(ctx, method, cond, seeded(config, s, 1))
            counts.append(trapped_points(run.traj, ctx.specs, band, threshold))
            mins.append(spec_satisfaction(run.traj, ctx.specs)[0])
            worlds.append(ctx.stats.denormalize(run.traj))
        report["methods"][method] = {
            "trapped_total": int(sum(counts)),
            "trapped_per_seed": counts,
            "spec_min": float(np.min(mins)) if ctx.specs else None,
            "unsafe_seeds": int(sum(1 for m in mins if m < -DEFAULT_TOL)),
        }
        plot = emit_plot(
            ctx.maze, worlds, ctx.world_specs, output_path(config, f"trap_{method}.svg"), header, title=f"local trap: {method}"
        )
        plots[method] = str(plot)
        logger.info(f"{method}: {sum(counts)} trapped points over {n_seeds} seeds")
    return report, plots


class LocalTrapNode:
    @classmethod
    def INPUT_TYPES(cls) -> Dict[str, Any]:
        return {"required": {"config": ("DICT", {"tooltip": "Loaded run configuration"})}}

    RETURN_TYPES = ("STRING", "DICT", "DICT")
    RETURN_NAMES = ("report_path", "report", "plots")
    FUNCTION = "process"
    CATEGORY = TRAP_CATEGORY

    def process(self, config: Dict[str, Any]) -> Tuple[str, Dict[str, Any], Dict[str, str]]:
        report, plots = local_trap_scenario(config)
        report["plots"] = plots
        path = emit_report(report, output_path(config, config["trap"]["report"]), artifact_header(config, config["seed"]))
        return str(path), report, plots


NODE_CLASS_MAPPINGS = {"LocalTrapNode": LocalTrapNode}
NODE_DISPLAY_NAME_MAPPINGS = {"LocalTrapNode": "Local Trap Scenario"}

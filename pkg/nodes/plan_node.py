import logging
from typing import Any, Dict, Optional, Tuple

from utils.common import artifact_header
from utils.data_loader import output_path
from utils.invariance import emit_diagnostics, snapshot_schedule, snapshots
from utils.metrics import group_satisfaction, score, spec_satisfaction
from utils.planning import endpoints, load_context, run_method, seeded
from utils.report_writer import emit_plot, emit_report, emit_trajectory

logger = logging.getLogger(__name__)

PLAN_CATEGORY = "BarrierDiffuser/Planning"


class PlanTrajectoryNode:
    """
    Samples one plan with ``plan.method`` and writes the trajectory, its per-step
    safety diagnostics and a plot. Invariance modes also get a plot of the plan at
    ``plan.snapshots`` denoising steps.
    """

    @classmethod
    def INPUT_TYPES(cls) -> Dict[str, Any]:
        return {"required": {"config": ("DICT", {"tooltip": "Loaded run configuration"})}}

    RETURN_TYPES = ("STRING", "STRING", "DICT")
    RETURN_NAMES = ("trajectory_path", "plot_path", "summary")
    FUNCTION = "process"
    CATEGORY = PLAN_CATEGORY

    def process(self, config: Dict[str, Any]) -> Tuple[str, str, Dict[str, Any]]:
        ctx = load_context(config)
        method = config["plan"]["method"]
        start, goal = endpoints(ctx, seeded(config, 0), "plan", float(config["benchmark"]["start_margin"]))
        steps = snapshot_schedule(ctx.sched.n_steps, int(config["plan"].get("snapshots", 0)))
        run = run_method(ctx, method, ctx.conditioning(start, goal), seeded(config, 0, 1), steps)
        world = ctx.stats.denormalize(run.traj)
        header = artifact_header(config, config["seed"])

        traj_path = emit_trajectory(world, output_path(config, f"trajectory_{method}.csv"), {**header, "method": method})
        if run.diags is not None:
            emit_diagnostics(run.diags, output_path(config, f"diagnostics_{method}.jsonl"))
        plot_path = emit_plot(
            ctx.maze,
            [world],
            ctx.world_specs,
            output_path(config, f"plan_{method}.svg"),
            header,
            labels=[method],
            title=f"{ctx.maze.name}: {method}",
        )
        steps_plot = self._emit_steps(ctx, run, method, output_path(config, f"plan_{method}_steps.svg"), header)

        spec_min, spec_mean = spec_satisfaction(run.traj, ctx.specs)
        s_min, s_mean = group_satisfaction(run.traj, ctx.specs, "simple")
        c_min, c_mean = group_satisfaction(run.traj, ctx.specs, "complex")
        summary = {
            "method": method,
            "start": start,
            "goal": goal,
            "spec_min": spec_min,
            "spec_mean": spec_mean,
            "s_spec_min": s_min,
            "s_spec_mean": s_mean,
            "c_spec_min": c_min,
            "c_spec_mean": c_mean,
            "score": score(world, ctx.maze, goal, float(config["benchmark"]["r_goal"]), int(config["benchmark"]["goal_window"])),
            "step_time": run.step_time,
            "steps_plot": steps_plot,
        }
        emit_report(summary, output_path(config, f"plan_{method}.json"), header)
        logger.info(f"Planned with {method}: min b = {spec_min:.3e}")
        return str(traj_path), str(plot_path), summary

    @staticmethod
    def _emit_steps(ctx, run, method, path, header) -> Optional[str]:
        kept = snapshots(run.diags or [])
        if not kept:
            return None
        worlds = [ctx.stats.denormalize(tau) for _, tau in kept]
        labels = [f"j = {j}" for j, _ in kept]
        if run.diags[-1].j < 0:
            worlds.append(ctx.stats.denormalize(run.traj))
            labels.append(f"j = {run.diags[-1].j} (final)")
        title = f"{ctx.maze.name}: {method} denoising"
        return str(emit_plot(ctx.maze, worlds, ctx.world_specs, path, header, labels=labels, title=title))


NODE_CLASS_MAPPINGS = {"PlanTrajectoryNode": PlanTrajectoryNode}
NODE_DISPLAY_NAME_MAPPINGS = {"PlanTrajectoryNode": "Plan Safe Trajectory"}

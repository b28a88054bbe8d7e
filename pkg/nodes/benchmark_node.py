"""
Multi-method maze benchmark.

Every episode draws a fresh start/goal outside the obstacles; all methods of an
episode share the same sampling stream so their plans differ only by method.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from utils.common import artifact_header, config_hash
from utils.data_loader import output_path
from utils.errors import InvalidParameterError
from utils.metrics import DEFAULT_TOL, group_satisfaction, log_violations, score, spec_satisfaction
from utils.planning import PlanContext, endpoints, load_context, run_method, seeded
from utils.report_writer import emit_report

logger = logging.getLogger(__name__)

BENCH_CATEGORY = "BarrierDiffuser/Evaluation"


@dataclass
class EpisodeResult:
    s_min: float
    s_mean: float
    c_min: float
    c_mean: float
    spec_min: float
    score: float
    step_time: float
    log_violations: Dict[str, int] = field(default_factory=dict)


@dataclass
class MethodSummary:
    method: str
    s_spec_min: float
    s_spec_mean: float
    c_spec_min: float
    c_spec_mean: float
    score_mean: float
    score_std: float
    step_time_mean: float
    n_episodes: int
    violating_episodes: int
    overhead_vs_off: Optional[float] = None
    episode_spec_min: List[float] = field(default_factory=list)
    log_violations: Dict[str, int] = field(default_factory=dict)


@dataclass
class BenchmarkReport:
    seed: int
    n_episodes: int
    config_hash: str
    methods: List[MethodSummary] = field(default_factory=list)

    def __post_init__(self):
        if self.n_episodes < 1:
            raise InvalidParameterError("a benchmark needs at least one episode")
        for summary in self.methods:
            if not summary.step_time_mean > 0:
                raise InvalidParameterError(f"method '{summary.method}' has a non-positive step time {summary.step_time_mean}")

    def row(self, method: str) -> MethodSummary:
        for summary in self.methods:
            if summary.method == method:
                return summary
        raise KeyError(method)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _nanmin(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(np.min(values[~np.isnan(values)])) if np.any(~np.isnan(values)) else float("nan")


def _nanmean(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(np.mean(values[~np.isnan(values)])) if np.any(~np.isnan(values)) else float("nan")


def _episode(ctx: PlanContext, methods: List[str], episode: int) -> Dict[str, EpisodeResult]:
    bench = ctx.config["benchmark"]
    inv = ctx.config["invariance"]
    start, goal = endpoints(ctx, seeded(ctx.config, episode), "benchmark", float(bench["start_margin"]))
    cond = ctx.conditioning(start, goal)
    results = {}
    for method in methods:
        run = run_method(ctx, method, cond, seeded(ctx.config, episode, 1))
        s_min, s_mean = group_satisfaction(run.traj, ctx.specs, "simple")
        c_min, c_mean = group_satisfaction(run.traj, ctx.specs, "complex")
        spec_min, _ = spec_satisfaction(run.traj, ctx.specs)
        world = ctx.stats.denormalize(run.traj)
        results[method] = EpisodeResult(
            s_min=s_min,
            s_mean=s_mean,
            c_min=c_min,
            c_mean=c_mean,
            spec_min=spec_min,
            score=score(world, ctx.maze, goal, float(bench["r_goal"]), int(bench["goal_window"])),
            step_time=run.step_time,
            log_violations=log_violations(
                method, run.diags, run.traj, ctx.specs, float(inv["eps_classk"]), float(inv["delta_tau"])
            ),
        )
    return results


def _summarize(method: str, episodes: List[EpisodeResult]) -> MethodSummary:
    scores = np.array([e.score for e in episodes])
    spec_mins = [e.spec_min for e in episodes]
    checks: Dict[str, int] = {}
    for e in episodes:
        for name, count in e.log_violations.items():
            checks[name] = checks.get(name, 0) + count
    return MethodSummary(
        method=method,
        s_spec_min=_nanmin([e.s_min for e in episodes]),
        s_spec_mean=_nanmean([e.s_mean for e in episodes]),
        c_spec_min=_nanmin([e.c_min for e in episodes]),
        c_spec_mean=_nanmean([e.c_mean for e in episodes]),
        score_mean=float(scores.mean()),
        score_std=float(scores.std()),
        step_time_mean=float(np.mean([e.step_time for e in episodes])),
        n_episodes=len(episodes),
        violating_episodes=int(sum(1 for v in spec_mins if v < -DEFAULT_TOL)),
        episode_spec_min=spec_mins,
        log_violations=checks,
    )


def run_benchmark(config: Dict[str, Any], ctx: Optional[PlanContext] = None) -> BenchmarkReport:
    """
    Run every configured method over ``benchmark.episodes`` episodes.

    The invariance methods also have their step logs checked (``log_violations``);
    any counterexample is logged as a warning.

    Raises:
        CheckpointError: no trained checkpoint at ``training.checkpoint``.
        InvalidParameterError: a method reports a non-positive step time.
    """
    ctx = ctx or load_context(config)
    bench = config["benchmark"]
    methods = list(config["methods"])
    n_episodes = int(bench["episodes"])
    workers = max(1, int(bench.get("workers", 1)))
    if bench.get("timing", True) and workers > 1:
        logger.info("Timing run: executing episodes one at a time")
        workers = 1

    progress = bool(config.get("progress"))
    if workers == 1:
        per_episode = [_episode(ctx, methods, e) for e in tqdm(range(n_episodes), desc="bench", disable=not progress)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            jobs = pool.map(lambda e: _episode(ctx, methods, e), range(n_episodes))
            per_episode = list(tqdm(jobs, total=n_episodes, desc="bench", disable=not progress))

    report = BenchmarkReport(
        seed=int(config["seed"]),
        n_episodes=n_episodes,
        config_hash=config_hash(config),
        methods=[_summarize(m, [results[m] for results in per_episode]) for m in methods],
    )
    if "off" in methods:
        off_time = report.row("off").step_time_mean
        for summary in report.methods:
            summary.overhead_vs_off = summary.step_time_mean / off_time
    for summary in report.methods:
        logger.info(
            f"{summary.method:>10}: S {summary.s_spec_min:+.3e} / {summary.s_spec_mean:+.3e}  "
            f"C {summary.c_spec_min:+.3e} / {summary.c_spec_mean:+.3e}  "
            f"score {summary.score_mean:.3f} +- {summary.score_std:.3f}  step {summary.step_time_mean * 1e3:.2f} ms"
        )
        failed = {name: count for name, count in summary.log_violations.items() if count}
        if failed:
            logger.warning(f"{summary.method}: step-log checks failed {failed}")
    return report


class BenchmarkNode:
    @classmethod
    def INPUT_TYPES(cls) -> Dict[str, Any]:
        return {"required": {"config": ("DICT", {"tooltip": "Loaded run configuration"})}}

    RETURN_TYPES = ("STRING", "DICT")
    RETURN_NAMES = ("report_path", "report")
    FUNCTION = "process"
    CATEGORY = BENCH_CATEGORY

    def process(self, config: Dict[str, Any]) -> Tuple[str, Dict[str, Any]]:
        report = run_benchmark(config)
        path = emit_report(report, output_path(config, config["benchmark"]["report"]), artifact_header(config, config["seed"]))
        return str(path), report.to_dict()


NODE_CLASS_MAPPINGS = {"BenchmarkNode": BenchmarkNode}
NODE_DISPLAY_NAME_MAPPINGS = {"BenchmarkNode": "Safety Benchmark"}

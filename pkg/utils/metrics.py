"""
Trajectory metrics and checks over per-step safety logs.
"""

import logging
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .maze import MazeDefinition
from .specs import BarrierSpec, barrier_values

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-5


def barrier_matrix(traj: np.ndarray, specs: Sequence[BarrierSpec]) -> np.ndarray:
    """(n_specs, H+1) barrier values."""
    if not specs:
        return np.zeros((0, np.shape(traj)[0]))
    return np.stack([barrier_values(spec, traj) for spec in specs])


def spec_satisfaction(traj: np.ndarray, specs: Sequence[BarrierSpec]) -> Tuple[float, float]:
    """
    (min, mean) of b over every planning step and spec.

    Both are NaN for an empty spec set.
    """
    values = barrier_matrix(traj, specs)
    if values.size == 0:
        return float("nan"), float("nan")
    return float(values.min()), float(values.mean())


def group_satisfaction(traj: np.ndarray, specs: Sequence[BarrierSpec], group: str) -> Tuple[float, float]:
    return spec_satisfaction(traj, [s for s in specs if s.group == group])


def score(
    traj: np.ndarray,
    maze: MazeDefinition,
    goal: np.ndarray,
    r_goal: float,
    goal_window: int = 3,
) -> float:
    """
    Goal/feasibility score in [0, 1], evaluated in world coordinates.

    0.5 when one of the last ``goal_window`` states lies within ``r_goal`` of the goal,
    plus 0.5 times the fraction of states inside free cells.
    """
    traj = np.asarray(traj, dtype=np.float64)
    tail = traj[-max(1, goal_window) :]
    reached = float(np.min(np.linalg.norm(tail - np.asarray(goal, dtype=np.float64), axis=1)) <= r_goal)
    feasible = float(np.mean(maze.in_free_cell(traj)))
    return 0.5 * reached + 0.5 * feasible


def trapped_points(
    traj: np.ndarray,
    specs: Sequence[BarrierSpec],
    band: float,
    gap_threshold: float,
    tol: float = DEFAULT_TOL,
) -> int:
    """
    Count interior states stuck on a spec boundary.

    A state is trapped when some spec has -tol <= b <= band there and the path jumps
    by more than ``gap_threshold`` into or out of it.
    """
    traj = np.asarray(traj, dtype=np.float64)
    if not specs or traj.shape[0] < 3:
        return 0
    values = barrier_matrix(traj, specs)
    near = np.any((values >= -tol) & (values <= band), axis=0)
    gaps = np.linalg.norm(np.diff(traj, axis=0), axis=1)
    jump = np.maximum(gaps[:-1], gaps[1:]) > gap_threshold
    return int(np.count_nonzero(near[1:-1] & jump))


def _barrier_log(diags) -> Optional[np.ndarray]:
    """(steps, n_specs, H+1) stack of the barriers recorded along a chain."""
    frames = [d.barriers for d in diags if d.barriers is not None]
    if not frames or frames[0].size == 0:
        return None
    return np.stack(frames)


def forward_invariance_violations(diags, tol: float = DEFAULT_TOL) -> int:
    """Number of (step, spec, k) where b fell below -tol after having been >= 0."""
    log = _barrier_log(diags)
    if log is None:
        return 0
    entered = np.maximum.accumulate(log >= 0, axis=0)
    return int(np.count_nonzero(entered[:-1] & (log[1:] < -tol)))


def exponential_bound_violations(diags, eps: float, delta_tau: float, tol: float = DEFAULT_TOL) -> int:
    """
    Check V = -b against V_N * (1 - eps * delta_tau)^(N - j) for initially violated entries.

    The log is assumed to start at j = N and advance one diffusion step per record.
    """
    log = _barrier_log(diags)
    if log is None:
        return 0
    violation = -log
    initial = violation[0]
    decay = (1.0 - eps * delta_tau) ** np.arange(log.shape[0])
    bound = np.maximum(initial, 0.0)[None] * decay[:, None, None] + tol
    mask = np.broadcast_to(initial > 0, violation.shape)
    return int(np.count_nonzero(mask & (violation > bound)))


def tvs_violations(diags, tol: float = DEFAULT_TOL) -> int:
    """Number of logged (step, spec, k) with b - gamma < -tol."""
    total = 0
    for diag in diags:
        if diag.barriers is None or diag.gamma is None:
            continue
        total += int(np.count_nonzero(diag.barriers - diag.gamma < -tol))
    return total


def terminal_violations(traj: np.ndarray, specs: Sequence[BarrierSpec], tol: float = DEFAULT_TOL) -> int:
    return int(np.count_nonzero(barrier_matrix(traj, specs) < -tol))


# Checks that hold for every chain of a mode; baselines have no step log to check.
LOG_CHECKS = {
    "ros": ("forward_invariance", "exponential_bound", "terminal", "unconverged_steps"),
    "res": ("terminal", "unconverged_steps"),
    "tvs": ("tvs", "terminal", "unconverged_steps"),
}


def log_violations(
    method: str,
    diags,
    traj: np.ndarray,
    specs: Sequence[BarrierSpec],
    eps: float,
    delta_tau: float,
    tol: float = DEFAULT_TOL,
) -> Dict[str, int]:
    """
    Count counterexamples to the guarantees of ``method`` in one chain.

    Returns:
        check name -> count for the checks in ``LOG_CHECKS[method]``; empty for other methods
    """
    checks = LOG_CHECKS.get(method, ())
    if not checks or diags is None:
        return {}
    counts = {
        "forward_invariance": lambda: forward_invariance_violations(diags, tol),
        "exponential_bound": lambda: exponential_bound_violations(diags, eps, delta_tau, tol),
        "tvs": lambda: tvs_violations(diags, tol),
        "terminal": lambda: terminal_violations(traj, specs, tol),
        "unconverged_steps": lambda: sum(1 for d in diags if not d.converged),
    }
    return {name: int(counts[name]()) for name in checks}

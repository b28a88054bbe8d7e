"""
Finite-time diffusion invariance for the reverse process.

Each denoising transition tau^{j+1} -> tau^j is read as controllable dynamics
tau^{j*} = tau^{j+1} + delta_tau * u with nominal velocity
u_nom = (tau^j - tau^{j+1}) / delta_tau. The velocity is projected onto the CBF
rows of the chosen mode before the state is updated:

    ROS   grad b(x_k) . u >= -alpha(b(x_k))
    RES   grad b(x_k) . u - w_k(j) r_k >= -alpha(b(x_k)),  w_k(j) -> 0 as j -> 0,
          followed by n_extra hard steps with the denoiser frozen at step 1
    TVS   grad b(x_k) . u >= gamma_dot_k - alpha(b(x_k) - gamma_k(j)),  gamma_k(0) = 0

Rows are linearized at the state being propagated (tau^{j+1}). gamma_dot is the
rate of gamma along the denoising direction, (gamma(j-1) - gamma(j)) / delta_tau.
"""

import json
import logging
import time
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .diffusion import Conditioning, DenoiserModel, DiffusionSchedule, denoise_step, prior_sample
from .errors import ConditioningError, InfeasibleConstraintError, InvalidParameterError, QPConvergenceError
from .qp import AUTO_RELAX_WEIGHT, ConstraintRow, ProjectionProblem, ProjectionSolution, dump_projection, solve_projection
from .specs import BarrierSpec, barrier_values, barrier_values_and_gradients, eval_barrier, terminal_form

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    OFF = "off"
    ROS = "ros"
    RES = "res"
    TVS = "tvs"


@dataclass
class InvarianceConfig:
    mode: Mode = Mode.ROS
    eps_classk: float = 1.0
    delta_tau: float = 1.0
    n_extra: int = 50
    w_max: float = 1.0
    class_k: str = "linear"
    gamma_margin: float = 0.0
    qp_tol: float = 1e-9
    qp_max_iter: int = 10_000
    auto_relax_weight: float = AUTO_RELAX_WEIGHT
    noise_injection: bool = True
    extra_step_noise: bool = False
    on_qp_failure: str = "abort"
    qp_dump_dir: Optional[str] = None
    record_barriers: bool = True
    snapshot_steps: Tuple[int, ...] = ()

    def __post_init__(self):
        self.snapshot_steps = tuple(int(j) for j in self.snapshot_steps)
        self.mode = Mode(str(self.mode).lower()) if not isinstance(self.mode, Mode) else self.mode
        if not self.eps_classk > 0:
            raise InvalidParameterError(f"eps_classk must be > 0, got {self.eps_classk}")
        if not self.delta_tau > 0:
            raise InvalidParameterError(f"delta_tau must be > 0, got {self.delta_tau}")
        if self.n_extra < 0 or self.w_max < 0 or self.gamma_margin < 0:
            raise InvalidParameterError("n_extra, w_max and gamma_margin must be non-negative")
        if not self.auto_relax_weight > 0:
            raise InvalidParameterError(f"auto_relax_weight must be > 0, got {self.auto_relax_weight}")
        if self.class_k not in ("linear", "cubic"):
            raise InvalidParameterError(f"class_k must be 'linear' or 'cubic', got '{self.class_k}'")
        if self.on_qp_failure not in ("abort", "pass_through"):
            raise InvalidParameterError(f"on_qp_failure must be 'abort' or 'pass_through', got '{self.on_qp_failure}'")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], **overrides) -> "InvarianceConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            logger.warning(f"Ignoring unknown invariance keys: {sorted(unknown)}")
        values = {k: v for k, v in data.items() if k in known}
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class GammaSchedule:
    """gamma_k(j) = gamma_k(N) * j / N for each (spec, k); gamma_n has shape (n_specs, H+1)."""

    gamma_n: np.ndarray
    n_steps: int

    def at(self, j: int) -> np.ndarray:
        return self.gamma_n * (max(j, 0) / self.n_steps)

    def rate(self, j: int, delta_tau: float = 1.0) -> np.ndarray:
        """Change of gamma from step j to step j-1, per unit diffusion time."""
        return (self.at(j - 1) - self.at(j)) / delta_tau

    @classmethod
    def zeros(cls, n_specs: int, n_states: int, n_steps: int) -> "GammaSchedule":
        return cls(np.zeros((n_specs, n_states)), n_steps)


@dataclass
class StepDiagnostics:
    j: int
    min_barrier: List[float]
    barriers: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None
    qp_iterations: int = 0
    kkt_residual: float = 0.0
    max_relaxation: float = 0.0
    n_active: int = 0
    converged: bool = True
    wall_time: float = 0.0
    snapshot: Optional[np.ndarray] = None

    def to_record(self) -> Dict[str, Any]:
        record = {
            "j": self.j,
            "min_barrier": [float(v) for v in self.min_barrier],
            "qp_iterations": self.qp_iterations,
            "kkt_residual": self.kkt_residual,
            "max_relaxation": self.max_relaxation,
            "n_active": self.n_active,
            "converged": self.converged,
            "wall_time": self.wall_time,
        }
        if self.gamma is not None and self.barriers is not None and self.barriers.size:
            record["min_gap"] = [float(v) for v in np.min(self.barriers - self.gamma, axis=1)]
        return record


def class_k(b: np.ndarray, eps: float, kind: str = "linear") -> np.ndarray:
    """Extended class-K function: eps * b (default) or eps * b^3."""
    return eps * b if kind == "linear" else eps * b**3


def diffusion_velocity(tau_j: np.ndarray, tau_jplus1: np.ndarray, delta_tau: float) -> np.ndarray:
    """(tau^j - tau^{j+1}) / delta_tau, flattened."""
    tau_j = np.asarray(tau_j, dtype=np.float64)
    tau_jplus1 = np.asarray(tau_jplus1, dtype=np.float64)
    if tau_j.shape != tau_jplus1.shape:
        raise InvalidParameterError(f"trajectory shapes differ: {tau_j.shape} vs {tau_jplus1.shape}")
    return ((tau_j - tau_jplus1) / delta_tau).ravel()


# ---------------------------------------------------------------------------
# Row construction
# ---------------------------------------------------------------------------


def _rows(
    tau: np.ndarray,
    specs: Sequence[BarrierSpec],
    offset,
    relax_weight: float = 0.0,
) -> List[ConstraintRow]:
    """One row per (k, spec); ``offset(spec_index, values)`` gives the (H+1,) offsets of a spec."""
    tau = np.asarray(tau, dtype=np.float64)
    n_states, d = tau.shape
    per_spec = []
    for s, spec in enumerate(specs):
        values, grad_own, grad_next = barrier_values_and_gradients(spec, tau)
        per_spec.append((spec, grad_own, grad_next, offset(s, values)))

    rows = []
    for k in range(n_states):
        for spec, grad_own, grad_next, offsets in per_spec:
            dims = np.asarray(spec.dims)
            index = [k * d + dims]
            coeffs = [grad_own[k, dims]]
            if spec.is_pair and k + 1 < n_states:
                index.append((k + 1) * d + dims)
                coeffs.append(grad_next[k, dims])
            rows.append(
                ConstraintRow(
                    np.concatenate(index),
                    np.concatenate(coeffs),
                    offsets[k],
                    relax_weight=relax_weight,
                    relax_index=k,
                    label=f"{spec.name}@{k}",
                )
            )
    return rows


def build_rows_ros(tau: np.ndarray, specs: Sequence[BarrierSpec], eps: float, kind: str = "linear") -> List[ConstraintRow]:
    """Hard rows grad b . u >= -alpha(b) linearized at ``tau``."""
    rows = _rows(tau, specs, lambda s, values: -class_k(values, eps, kind))
    for row in rows:
        row.relax_index = None
    return rows


def relaxation_weight(j: int, n_steps: int, w_max: float) -> float:
    """w(j) = w_max * max(0, j) / N; zero from step 0 on."""
    return w_max * max(0, j) / n_steps


def build_rows_res(
    tau: np.ndarray, specs: Sequence[BarrierSpec], eps: float, j: int, n_steps: int, w_max: float, kind: str = "linear"
) -> Tuple[List[ConstraintRow], int]:
    """
    Relaxed rows for the step producing tau^j: per-planning-step slack r_k weighted by w(j).

    Returns:
        (rows, relax_dim) with relax_index = k
    """
    w = relaxation_weight(j, n_steps, w_max)
    rows = _rows(tau, specs, lambda s, values: -class_k(values, eps, kind), relax_weight=w)
    return rows, np.asarray(tau).shape[0]


def build_rows_tvs(
    tau: np.ndarray,
    specs: Sequence[BarrierSpec],
    eps: float,
    gamma: GammaSchedule,
    j: int,
    delta_tau: float = 1.0,
    kind: str = "linear",
) -> List[ConstraintRow]:
    """Hard rows grad b . u >= gamma_dot - alpha(b - gamma(j)) at the state tau = tau^j."""
    current = gamma.at(j)
    rate = gamma.rate(j, delta_tau)
    rows = _rows(tau, specs, lambda s, values: rate[s] - class_k(values - current[s], eps, kind))
    for row in rows:
        row.relax_index = None
    return rows


def init_gamma(tau_n: np.ndarray, specs: Sequence[BarrierSpec], margin: float, n_steps: int) -> GammaSchedule:
    """gamma_k(N) = min(0, b(x_k^N)) - margin, interpolated linearly to 0 at j = 0."""
    if margin < 0:
        raise InvalidParameterError("gamma margin must be non-negative")
    n_states = np.asarray(tau_n).shape[0]
    if not specs:
        return GammaSchedule.zeros(0, n_states, n_steps)
    values = np.stack([barrier_values(spec, tau_n) for spec in specs])
    return GammaSchedule(np.minimum(0.0, values) - margin, n_steps)


def _freeze_states(rows: List[ConstraintRow], frozen: Sequence[int]) -> List[ConstraintRow]:
    """Drop coefficients on frozen flat indices (pinned states keep zero velocity)."""
    frozen = np.asarray(sorted(frozen), dtype=np.int64)
    if not rows or frozen.size == 0:
        return list(rows)
    size = max(int(frozen[-1]), max(int(row.index.max(initial=0)) for row in rows)) + 1
    blocked = np.zeros(size, dtype=bool)
    blocked[frozen] = True
    kept = []
    for row in rows:
        mask = ~blocked[row.index]
        if mask.all():
            kept.append(row)
            continue
        kept.append(
            ConstraintRow(row.index[mask], row.coeffs[mask], row.offset, row.relax_weight, row.relax_index, row.label)
        )
    return kept


# ---------------------------------------------------------------------------
# Safe reverse process
# ---------------------------------------------------------------------------


def _mode_rows(
    tau: np.ndarray, j: int, specs: Sequence[BarrierSpec], config: InvarianceConfig, n_steps: int, gamma: Optional[GammaSchedule]
) -> Tuple[List[ConstraintRow], int]:
    eps, kind = config.eps_classk, config.class_k
    if config.mode is Mode.ROS:
        return build_rows_ros(tau, specs, eps, kind), 0
    if config.mode is Mode.RES:
        return build_rows_res(tau, specs, eps, j, n_steps, config.w_max, kind)
    if gamma is None:
        raise InvalidParameterError("TVS mode needs a GammaSchedule")
    return build_rows_tvs(tau, specs, eps, gamma, j + 1, config.delta_tau, kind), 0


def _handle_failure(config: InvarianceConfig, message: str, problem: ProjectionProblem, solution, j: int, error: Exception):
    if config.qp_dump_dir:
        path = dump_projection(problem, solution, Path(config.qp_dump_dir) / f"projection_j{j}.json")
        logger.warning(f"Dumped failing projection to {path}")
    if config.on_qp_failure == "abort":
        raise error
    logger.warning(f"Step {j}: {message}; passing the unprojected step through")


def safe_denoise_step(
    model: DenoiserModel,
    tau_jplus1: np.ndarray,
    j: int,
    sched: DiffusionSchedule,
    config: InvarianceConfig,
    specs: Sequence[BarrierSpec],
    state: Optional[GammaSchedule],
    rng: np.random.Generator,
    cond: Optional[Conditioning] = None,
) -> Tuple[np.ndarray, Optional[ProjectionSolution]]:
    """
    Produce tau^{j*} from tau^{j+1}.

    For j < 0 (extra relaxed-safe steps) the denoiser runs at step 1 without noise unless
    ``config.extra_step_noise`` is set.

    Returns:
        (tau^{j*}, projection solution or None when no projection was needed)

    Raises:
        InfeasibleConstraintError, QPConvergenceError: when ``config.on_qp_failure`` is "abort".
    """
    index = max(1, j + 1)
    if j >= 0:
        tau_j = denoise_step(model, tau_jplus1, index, sched, rng, add_noise=config.noise_injection)
    else:
        tau_j = denoise_step(model, tau_jplus1, 1, sched, rng, add_noise=False)
        if config.extra_step_noise:
            tau_j = tau_j + np.sqrt(sched.betas[0]) * rng.standard_normal(tau_j.shape)
    if cond is not None:
        tau_j = cond.apply(tau_j)
    if config.mode is Mode.OFF or not specs:
        return tau_j, None

    u_nom = diffusion_velocity(tau_j, tau_jplus1, config.delta_tau)
    rows, relax_dim = _mode_rows(tau_jplus1, j, specs, config, sched.n_steps, state)
    if cond is not None:
        n_states, d = tau_j.shape
        rows = _freeze_states(rows, list(range(d)) + list(range((n_states - 1) * d, n_states * d)))
    problem = ProjectionProblem(u_nom, rows, relax_dim)

    try:
        solution = solve_projection(
            problem,
            config.qp_tol,
            config.qp_max_iter,
            relax_infeasible=config.mode is Mode.RES,
            auto_relax_weight=config.auto_relax_weight,
        )
    except InfeasibleConstraintError as e:
        _handle_failure(config, str(e), problem, None, j, e)
        return tau_j, None
    if not solution.converged:
        message = f"projection not converged (KKT {solution.kkt_residual:.3e})"
        _handle_failure(config, message, problem, solution, j, QPConvergenceError(message, solution))
        return tau_j, solution
    if not solution.active:
        return tau_j, solution
    delta = (solution.u_star - u_nom).reshape(tau_j.shape)
    tau_star = tau_j + config.delta_tau * delta
    if cond is not None:
        tau_star = cond.apply(tau_star)
    return tau_star, solution


def check_conditioning(cond: Optional[Conditioning], specs: Sequence[BarrierSpec]) -> None:
    """Reject pinned endpoints that violate a spec (pair specs use their plain form)."""
    if cond is None:
        return
    for spec in specs:
        plain = terminal_form(spec)
        for label, point in (("start", cond.start), ("goal", cond.goal)):
            value = eval_barrier(plain, point)
            if value < 0:
                raise ConditioningError(f"{label} violates spec '{spec.name}' (b = {value:.4g})")


def _diagnostics(
    tau: np.ndarray, j: int, specs: Sequence[BarrierSpec], config: InvarianceConfig, gamma: Optional[GammaSchedule],
    solution: Optional[ProjectionSolution], elapsed: float,
) -> StepDiagnostics:
    barriers = np.stack([barrier_values(spec, tau) for spec in specs]) if specs else np.zeros((0, tau.shape[0]))
    diag = StepDiagnostics(
        j=j,
        min_barrier=[float(v) for v in barriers.min(axis=1)] if specs else [],
        barriers=barriers if config.record_barriers else None,
        gamma=gamma.at(j) if gamma is not None and config.record_barriers else None,
        wall_time=elapsed,
    )
    if solution is not None:
        diag.qp_iterations = solution.iterations
        diag.kkt_residual = solution.kkt_residual
        diag.max_relaxation = float(np.max(np.abs(solution.r_star), initial=0.0))
        diag.n_active = int(np.count_nonzero(solution.duals > 0))
        diag.converged = solution.converged
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(json.dumps(diag.to_record()))
    return diag


def safe_sample(
    model: DenoiserModel,
    sched: DiffusionSchedule,
    cond: Optional[Conditioning],
    specs: Sequence[BarrierSpec],
    config: InvarianceConfig,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, List[StepDiagnostics]]:
    """
    Run the full reverse chain with invariance enforced at every step.

    The chain runs j = N-1 ... 0, then j = -1 ... -n_extra for the relaxed-safe mode
    (only when there is something to enforce); the last state is returned as tau^0.

    States of the steps in ``config.snapshot_steps`` are kept on their diagnostics.

    Returns:
        (trajectory, per-step diagnostics starting with the prior at j = N)

    Raises:
        ConditioningError: pinned endpoints violate a spec.
    """
    specs = list(specs)
    check_conditioning(cond, specs)
    tau = prior_sample(model, rng, cond)
    n = sched.n_steps
    gamma = init_gamma(tau, specs, config.gamma_margin, n) if config.mode is Mode.TVS and specs else None
    snaps = set(config.snapshot_steps)
    diags = [_diagnostics(tau, n, specs, config, gamma, None, 0.0)]
    if n in snaps:
        diags[0].snapshot = tau.copy()

    last = -config.n_extra if config.mode is Mode.RES and specs else 0
    for j in range(n - 1, last - 1, -1):
        started = time.perf_counter()
        tau, solution = safe_denoise_step(model, tau, j, sched, config, specs, gamma, rng, cond)
        diags.append(_diagnostics(tau, j, specs, config, gamma, solution, time.perf_counter() - started))
        if j in snaps:
            diags[-1].snapshot = tau.copy()
    return tau, diags


def snapshot_schedule(n_steps: int, count: int) -> Tuple[int, ...]:
    """``count`` denoising steps spread evenly from the prior (j = N) to j = 0."""
    if count <= 0:
        return ()
    if count == 1:
        return (0,)
    return tuple(sorted({int(round(j)) for j in np.linspace(n_steps, 0, count)}, reverse=True))


def snapshots(diags: Sequence[StepDiagnostics]) -> List[Tuple[int, np.ndarray]]:
    """(j, tau^j) for every step that kept its state, in chain order."""
    return [(d.j, d.snapshot) for d in diags if d.snapshot is not None]


def emit_diagnostics(diags: Sequence[StepDiagnostics], path) -> Path:
    """Write per-step diagnostics as JSON Lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for diag in diags:
            f.write(json.dumps(diag.to_record()) + "\n")
    return path

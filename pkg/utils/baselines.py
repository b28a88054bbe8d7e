"""
Comparison samplers that share the plain reverse process: truncation and guidance.

Neither baseline touches the model; both give no guarantee for specs they cannot handle.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import expit

from .diffusion import Conditioning, DenoiserModel, DiffusionSchedule, denoise_step, prior_sample
from .errors import InvalidParameterError
from .specs import CONIC_POWER, BarrierSpec, barrier_values_and_gradients

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 1.0
    epsilon_band: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.scale) or self.scale < 0:
            raise InvalidParameterError(f"guidance scale must be finite and >= 0, got {self.scale}")
        if self.epsilon_band < 0:
            raise InvalidParameterError(f"epsilon_band must be >= 0, got {self.epsilon_band}")


def unsupported_specs(specs: Sequence[BarrierSpec]) -> List[BarrierSpec]:
    """Specs truncation cannot project onto in closed form (the adjacent-pair ones)."""
    return [spec for spec in specs if spec.is_pair]


def truncate_states(tau: np.ndarray, specs: Sequence[BarrierSpec]) -> np.ndarray:
    """Project every state onto each simple spec's feasible set, in spec order."""
    tau = np.array(tau, dtype=np.float64, copy=True)
    for spec in specs:
        if spec.is_pair:
            continue
        if spec.kind in CONIC_POWER:
            p = float(CONIC_POWER[spec.kind])
            x0, y0, a, b = spec.params
            i, j = spec.dims
            dx = tau[:, i] - x0
            dy = tau[:, j] - y0
            q = np.abs(dx / a) ** p + np.abs(dy / b) ** p
            inside = q < 1.0
            centred = inside & (q == 0.0)
            scaled = inside & ~centred
            t = q[scaled] ** (-1.0 / p)
            tau[scaled, i] = x0 + t * dx[scaled]
            tau[scaled, j] = y0 + t * dy[scaled]
            # The centre has no radial direction: push along +x by convention.
            tau[centred, i] = x0 + a
            tau[centred, j] = y0
        else:
            limit, sign = spec.params[:2]
            (i,) = spec.dims
            tau[:, i] = np.minimum(tau[:, i], limit) if sign > 0 else np.maximum(tau[:, i], limit)
    return tau


def truncate_sample(
    model: DenoiserModel,
    sched: DiffusionSchedule,
    cond: Optional[Conditioning],
    specs: Sequence[BarrierSpec],
    rng: np.random.Generator,
    add_noise: bool = True,
) -> np.ndarray:
    """Reverse process with every state clipped back into each simple spec after each step."""
    skipped = unsupported_specs(specs)
    if skipped:
        logger.warning(f"Truncation unsupported for adjacent-pair specs: {[s.name for s in skipped]}")
    tau = prior_sample(model, rng, cond)
    for j in range(sched.n_steps, 0, -1):
        tau = denoise_step(model, tau, j, sched, rng, add_noise=add_noise)
        if cond is not None:
            tau = cond.apply(tau)
        tau = truncate_states(tau, specs)
    return tau


def guidance_shift(tau: np.ndarray, specs: Sequence[BarrierSpec], gcfg: GuidanceConfig) -> np.ndarray:
    """
    Mean shift -scale * grad sum_s softplus(-b_s(x_k)).

    With ``epsilon_band > 0`` only states with b_s < epsilon_band are pushed.
    """
    tau = np.asarray(tau, dtype=np.float64)
    shift = np.zeros_like(tau)
    for spec in specs:
        values, grad_own, grad_next = barrier_values_and_gradients(spec, tau)
        weight = expit(-values)
        if gcfg.epsilon_band > 0:
            weight = np.where(values < gcfg.epsilon_band, weight, 0.0)
        shift += weight[:, None] * grad_own
        if spec.is_pair:
            shift[1:] += weight[:-1, None] * grad_next[:-1]
    return gcfg.scale * shift


def guided_sample(
    model: DenoiserModel,
    sched: DiffusionSchedule,
    cond: Optional[Conditioning],
    specs: Sequence[BarrierSpec],
    gcfg: GuidanceConfig,
    rng: np.random.Generator,
    add_noise: bool = True,
) -> np.ndarray:
    """Reverse process whose mean is pushed along the safe gradient at each step."""
    tau = prior_sample(model, rng, cond)
    for j in range(sched.n_steps, 0, -1):
        shift = guidance_shift(tau, specs, gcfg) if gcfg.scale > 0 and specs else None
        tau = denoise_step(model, tau, j, sched, rng, add_noise=add_noise, mean_shift=shift)
        if cond is not None:
            tau = cond.apply(tau)
    return tau

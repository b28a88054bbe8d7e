"""
Minimal denoising diffusion model over fixed-horizon trajectories.

A trajectory is a float64 array of shape (H+1, d); batches add a leading axis.
Diffusion steps are 1-based: step j corrupts with alpha_bar[j-1], and
``denoise_step`` maps tau^j to tau^{j-1}.

The denoiser is a dense network over the flattened trajectory concatenated with
a sinusoidal embedding of j. Forward and backward passes are written out by hand
so that parameter gradients can be checked exactly against finite differences.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.special import expit
from tqdm import tqdm

from .common import ARTIFACT_NAME, ARTIFACT_VERSION
from .errors import CheckpointError, DimensionMismatchError, InvalidParameterError, TrainingDivergedError
from .specs import NormalizationStats

logger = logging.getLogger(__name__)

TIME_EMBED_DIM = 32
HIDDEN_WIDTH = 256
N_HIDDEN = 3
CHECKPOINT_FORMAT = 1


# ---------------------------------------------------------------------------
# Schedule and forward process
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiffusionSchedule:
    n_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_variance: np.ndarray

    def alpha_bar(self, j: int) -> float:
        return float(self.alpha_bars[j - 1])

    def check_step(self, j) -> None:
        steps = np.asarray(j)
        if np.any(steps < 1) or np.any(steps > self.n_steps):
            raise InvalidParameterError(f"diffusion step {j} outside 1..{self.n_steps}")


def schedule_from_betas(betas: np.ndarray) -> DiffusionSchedule:
    betas = np.asarray(betas, dtype=np.float64).ravel()
    if betas.size == 0 or np.any(betas <= 0) or np.any(betas >= 1):
        raise InvalidParameterError("betas must lie strictly inside (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    previous = np.concatenate([[1.0], alpha_bars[:-1]])
    posterior_variance = betas * (1.0 - previous) / (1.0 - alpha_bars)
    return DiffusionSchedule(betas.size, betas, alphas, alpha_bars, posterior_variance)


def make_schedule(n_steps: int, beta_min: float = 1e-4, beta_max: float = 4e-2) -> DiffusionSchedule:
    """Linear beta schedule between beta_min and beta_max over n_steps."""
    if n_steps < 1:
        raise InvalidParameterError(f"n_steps must be >= 1, got {n_steps}")
    if not 0 < beta_min <= beta_max < 1:
        raise InvalidParameterError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    return schedule_from_betas(np.linspace(beta_min, beta_max, n_steps))


def forward_noise(tau0: np.ndarray, j, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """x^j = sqrt(alpha_bar_j) x^0 + sqrt(1 - alpha_bar_j) eps (j may be one step per batch item)."""
    sched.check_step(j)
    tau0 = np.asarray(tau0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != tau0.shape:
        raise DimensionMismatchError(f"noise shape {eps.shape} != trajectory shape {tau0.shape}")
    abar = sched.alpha_bars[np.asarray(j) - 1]
    if np.ndim(abar):
        abar = abar.reshape((-1,) + (1,) * (tau0.ndim - 1))
    return np.sqrt(abar) * tau0 + np.sqrt(1.0 - abar) * eps


# ---------------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------------


def time_embedding(j, dim: int = TIME_EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding of diffusion steps, shape (B, dim)."""
    steps = np.atleast_1d(np.asarray(j, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = steps[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _silu(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    s = expit(z)
    return z * s, s * (1.0 + z * (1.0 - s))


class DenoiserModel:
    """
    Epsilon-prediction network: (flattened tau^j, embed(j)) -> predicted noise.

    Parameters live in ``params`` as ``W0, b0, ..., W{L}, b{L}`` with hidden layers
    followed by a linear output layer.
    """

    def __init__(
        self,
        horizon: int,
        state_dim: int,
        hidden_width: int = HIDDEN_WIDTH,
        n_hidden: int = N_HIDDEN,
        time_dim: int = TIME_EMBED_DIM,
        params: Optional[Dict[str, np.ndarray]] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        if horizon < 0 or state_dim < 1 or hidden_width < 1 or n_hidden < 0 or time_dim % 2:
            raise InvalidParameterError("invalid denoiser architecture")
        self.horizon = int(horizon)
        self.state_dim = int(state_dim)
        self.hidden_width = int(hidden_width)
        self.n_hidden = int(n_hidden)
        self.time_dim = int(time_dim)
        self.params = params if params is not None else self._init_params(rng or np.random.default_rng(0))
        self._check_params()

    @property
    def traj_shape(self) -> Tuple[int, int]:
        return self.horizon + 1, self.state_dim

    @property
    def flat_dim(self) -> int:
        return (self.horizon + 1) * self.state_dim

    @property
    def layer_sizes(self) -> List[int]:
        return [self.flat_dim + self.time_dim] + [self.hidden_width] * self.n_hidden + [self.flat_dim]

    def descriptor(self) -> Dict[str, Any]:
        return {
            "horizon": self.horizon,
            "state_dim": self.state_dim,
            "hidden_width": self.hidden_width,
            "n_hidden": self.n_hidden,
            "time_dim": self.time_dim,
            "activation": "silu",
        }

    def _init_params(self, rng: np.random.Generator) -> Dict[str, np.ndarray]:
        sizes = self.layer_sizes
        params = {}
        for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            params[f"W{layer}"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            params[f"b{layer}"] = np.zeros(fan_out)
        return params

    def _check_params(self) -> None:
        sizes = self.layer_sizes
        for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            W, b = self.params.get(f"W{layer}"), self.params.get(f"b{layer}")
            if W is None or b is None or W.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise InvalidParameterError(f"layer {layer} parameters do not match the architecture")

    def zero_(self) -> "DenoiserModel":
        for value in self.params.values():
            value[...] = 0.0
        return self


def denoiser_forward(model: DenoiserModel, tau_j: np.ndarray, j) -> Tuple[np.ndarray, Dict[str, Any]]:
    """
    Predict the noise in tau^j.

    Args:
        model: denoiser
        tau_j: (H+1, d) trajectory or (B, H+1, d) batch
        j: diffusion step, scalar or one per batch item

    Returns:
        (noise prediction with the shape of tau_j, activation cache for the backward pass)
    """
    tau_j = np.asarray(tau_j, dtype=np.float64)
    single = tau_j.ndim == 2
    batch = tau_j[None] if single else tau_j
    if batch.shape[1:] != model.traj_shape:
        raise DimensionMismatchError(f"trajectory shape {batch.shape[1:]} != model shape {model.traj_shape}")
    steps = np.broadcast_to(np.asarray(j), (batch.shape[0],))
    x = np.concatenate([batch.reshape(batch.shape[0], -1), time_embedding(steps, model.time_dim)], axis=1)

    inputs, derivs = [x], []
    h = x
    for layer in range(model.n_hidden):
        z = h @ model.params[f"W{layer}"] + model.params[f"b{layer}"]
        h, dh = _silu(z)
        inputs.append(h)
        derivs.append(dh)
    out = h @ model.params[f"W{model.n_hidden}"] + model.params[f"b{model.n_hidden}"]
    eps_hat = out.reshape(batch.shape)
    cache = {"inputs": inputs, "derivs": derivs, "single": single}
    return (eps_hat[0] if single else eps_hat), cache


def denoiser_backward(model: DenoiserModel, cache: Dict[str, Any], grad_out: np.ndarray) -> Dict[str, np.ndarray]:
    """Gradients of a scalar loss with respect to every parameter, given d loss / d output."""
    grad = np.asarray(grad_out, dtype=np.float64)
    grad = grad.reshape(1 if cache["single"] else grad.shape[0], -1)
    grads: Dict[str, np.ndarray] = {}
    inputs, derivs = cache["inputs"], cache["derivs"]
    for layer in range(model.n_hidden, -1, -1):
        grads[f"W{layer}"] = inputs[layer].T @ grad
        grads[f"b{layer}"] = grad.sum(axis=0)
        if layer > 0:
            grad = (grad @ model.params[f"W{layer}"].T) * derivs[layer - 1]
    return grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainingLog:
    epoch_losses: List[float] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.epoch_losses[0] if self.epoch_losses else float("nan")

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


class _Adam:
    def __init__(self, params: Dict[str, np.ndarray], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1**self.t)
            v_hat = self.v[k] / (1 - self.beta2**self.t)
            params[k] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def epsilon_loss(model: DenoiserModel, tau0: np.ndarray, j, eps: np.ndarray, sched: DiffusionSchedule) -> Tuple[float, Dict[str, np.ndarray]]:
    """Simplified objective mean ||eps - eps_hat||^2 and its parameter gradients."""
    tau_j = forward_noise(tau0, j, eps, sched)
    eps_hat, cache = denoiser_forward(model, tau_j, j)
    diff = eps_hat - eps
    loss = float(np.mean(diff**2))
    grads = denoiser_backward(model, cache, 2.0 * diff / diff.size)
    return loss, grads


def train(
    model: DenoiserModel,
    dataset: np.ndarray,
    sched: DiffusionSchedule,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
    batch_size: int = 64,
    optimizer: str = "sgd",
    progress: bool = False,
) -> TrainingLog:
    """
    Fit the denoiser with the epsilon-MSE objective.

    Mini-batches are drawn by a seeded permutation per epoch; steps are uniform on 1..N.

    Raises:
        TrainingDivergedError: the loss became non-finite.
    """
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim != 3 or dataset.shape[1:] != model.traj_shape:
        raise DimensionMismatchError(f"dataset shape {dataset.shape} does not match model {model.traj_shape}")
    if np.max(np.abs(dataset)) > 1.0 + 1e-9:
        logger.warning("Training data exceeds [-1, 1]; was it normalized?")
    if optimizer not in ("sgd", "adam"):
        raise InvalidParameterError(f"unknown optimizer '{optimizer}'")

    adam = _Adam(model.params) if optimizer == "adam" else None
    log = TrainingLog()
    n = dataset.shape[0]
    for epoch in tqdm(range(epochs), desc="train", disable=not progress):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            tau0 = dataset[order[start : start + batch_size]]
            j = rng.integers(1, sched.n_steps + 1, size=tau0.shape[0])
            eps = rng.standard_normal(tau0.shape)
            loss, grads = epsilon_loss(model, tau0, j, eps, sched)
            if not np.isfinite(loss):
                largest = max(float(np.max(np.abs(v))) for v in model.params.values())
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // batch_size} (lr={lr}, max|theta|={largest:.3e})"
                )
            if adam is not None:
                adam.step(model.params, grads, lr)
            else:
                for k, g in grads.items():
                    model.params[k] -= lr * g
            losses.append(loss)
        log.epoch_losses.append(float(np.mean(losses)))
        logger.debug(f"epoch {epoch}: loss {log.epoch_losses[-1]:.6f}")
    if log.epoch_losses:
        logger.info(f"Training finished: loss {log.initial_loss:.4f} -> {log.final_loss:.4f} over {epochs} epochs")
    return log


# ---------------------------------------------------------------------------
# Reverse process
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conditioning:
    """Clean values pinned at k = 0 (start) and k = H (goal)."""

    start: np.ndarray
    goal: np.ndarray

    def __post_init__(self):
        start = np.asarray(self.start, dtype=np.float64).ravel()
        goal = np.asarray(self.goal, dtype=np.float64).ravel()
        if start.shape != goal.shape or not (np.all(np.isfinite(start)) and np.all(np.isfinite(goal))):
            raise InvalidParameterError("conditioning start/goal must be finite vectors of equal length")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "goal", goal)

    @property
    def pinned_steps(self) -> Tuple[int, int]:
        return 0, -1

    def apply(self, tau: np.ndarray) -> np.ndarray:
        tau = np.array(tau, dtype=np.float64, copy=True)
        tau[0] = self.start
        tau[-1] = self.goal
        return tau


def posterior_mean(model: DenoiserModel, tau_j: np.ndarray, j: int, sched: DiffusionSchedule) -> np.ndarray:
    """mu_theta = (tau^j - beta_j / sqrt(1 - alpha_bar_j) * eps_hat) / sqrt(alpha_j)."""
    sched.check_step(j)
    eps_hat, _ = denoiser_forward(model, tau_j, j)
    beta, alpha, abar = sched.betas[j - 1], sched.alphas[j - 1], sched.alpha_bars[j - 1]
    return (tau_j - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)


def denoise_step(
    model: DenoiserModel,
    tau_j: np.ndarray,
    j: int,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
    add_noise: bool = True,
    mean_shift: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One ancestral step tau^j -> tau^{j-1}; no noise is injected at j = 1."""
    mean = posterior_mean(model, tau_j, j, sched)
    if mean_shift is not None:
        mean = mean + mean_shift
    if j > 1 and add_noise:
        mean = mean + np.sqrt(sched.posterior_variance[j - 1]) * rng.standard_normal(mean.shape)
    return mean


def prior_sample(model: DenoiserModel, rng: np.random.Generator, cond: Optional[Conditioning] = None) -> np.ndarray:
    tau = rng.standard_normal(model.traj_shape)
    return cond.apply(tau) if cond is not None else tau


def sample(
    model: DenoiserModel,
    sched: DiffusionSchedule,
    cond: Optional[Conditioning],
    rng: np.random.Generator,
    add_noise: bool = True,
) -> np.ndarray:
    """Full reverse chain from the Gaussian prior, with endpoints pinned after every step."""
    tau = prior_sample(model, rng, cond)
    for j in range(sched.n_steps, 0, -1):
        tau = denoise_step(model, tau, j, sched, rng, add_noise=add_noise)
        if cond is not None:
            tau = cond.apply(tau)
    return tau


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: Union[str, Path],
    model: DenoiserModel,
    sched: DiffusionSchedule,
    stats: Optional[NormalizationStats] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write architecture, weights, schedule and normalization stats to one .npz file."""
    header = {
        "artifact": ARTIFACT_NAME,
        "version": ARTIFACT_VERSION,
        "format": CHECKPOINT_FORMAT,
        "model": model.descriptor(),
        "stats": stats.to_dict() if stats is not None else None,
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param_{k}": v for k, v in model.params.items()}
    with open(path, "wb") as f:
        np.savez(f, header=np.array(json.dumps(header)), schedule_betas=sched.betas, **arrays)
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[DenoiserModel, DiffusionSchedule, Optional[NormalizationStats], Dict[str, Any]]:
    """Inverse of ``save_checkpoint``; returns (model, schedule, stats, header)."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            betas = np.array(data["schedule_betas"])
            params = {k[len("param_") :]: np.array(data[k]) for k in data.files if k.startswith("param_")}
    except (KeyError, ValueError, OSError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format')} in {path}")
    arch = header["model"]
    try:
        model = DenoiserModel(
            arch["horizon"], arch["state_dim"], arch["hidden_width"], arch["n_hidden"], arch["time_dim"], params=params
        )
    except InvalidParameterError as e:
        raise CheckpointError(f"checkpoint {path} does not match its descriptor: {e}") from e
    stats = NormalizationStats.from_dict(header["stats"]) if header.get("stats") else None
    return model, schedule_from_betas(betas), stats, header

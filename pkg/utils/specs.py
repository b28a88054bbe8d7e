"""
Differentiable safety specifications b(x) >= 0.

Every specification is an immutable ``BarrierSpec``. Single-state specs read one
planning state; adjacent-pair (speed-dependent) specs read x_k and x_{k+1} and
use the unit planning-step velocity v = x_{k+1} - x_k. The last planning state
has no successor, so pair specs fall back to their plain form at k = H.

Boxes are never a single min() barrier: they are decomposed into independent
half-space rows, one upper and one lower row per dimension.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


class SpecKind(str, Enum):
    ELLIPSE = "ellipse"
    QUARTIC_SUPERELLIPSE = "quartic_superellipse"
    HALF_SPACE = "half_space"
    BOX = "box"
    SPEED_DEPENDENT_HALF_SPACE = "speed_dependent_half_space"
    SPEED_DEPENDENT_BOX = "speed_dependent_box"


class Arity(str, Enum):
    SINGLE = "single"
    PAIR = "pair"


CONIC_POWER = {SpecKind.ELLIPSE: 2, SpecKind.QUARTIC_SUPERELLIPSE: 4}
_PAIR_KINDS = {SpecKind.SPEED_DEPENDENT_HALF_SPACE, SpecKind.SPEED_DEPENDENT_BOX}
_PLAIN_KIND = {
    SpecKind.SPEED_DEPENDENT_HALF_SPACE: SpecKind.HALF_SPACE,
    SpecKind.SPEED_DEPENDENT_BOX: SpecKind.BOX,
}


@dataclass(frozen=True)
class BarrierSpec:
    """
    One scalar barrier.

    ``params`` layout per kind:
      - ellipse / quartic_superellipse: (x0, y0, a, b) over ``dims = (i, j)``
      - half_space / box: (limit, sign) over ``dims = (i,)``,
        b = sign * (limit - x_i); sign = +1 is an upper bound, -1 a lower bound
      - speed_dependent_*: (limit, sign, phi) over ``dims = (i,)``,
        b = sign * (limit - x_i[k] - phi * (x_i[k+1] - x_i[k]))
    """

    kind: SpecKind
    params: Tuple[float, ...]
    dims: Tuple[int, ...]
    name: str = ""
    group: str = field(default="")

    def __post_init__(self):
        if not self.group:
            object.__setattr__(self, "group", "complex" if self.kind in _PAIR_KINDS else "simple")
        if not self.name:
            object.__setattr__(self, "name", self.kind.value)

    @property
    def arity(self) -> Arity:
        return Arity.PAIR if self.kind in _PAIR_KINDS else Arity.SINGLE

    @property
    def is_pair(self) -> bool:
        return self.arity is Arity.PAIR


@dataclass(frozen=True)
class NormalizationStats:
    """Per-dimension min/max of the training data; maps states into [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).ravel()
        hi = np.asarray(self.hi, dtype=np.float64).ravel()
        if lo.shape != hi.shape:
            raise InvalidParameterError("normalization min/max lengths differ")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))) or np.any(hi <= lo):
            raise InvalidParameterError(f"degenerate normalization stats: min={lo}, max={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_data(cls, points: np.ndarray) -> "NormalizationStats":
        flat = np.asarray(points, dtype=np.float64).reshape(-1, np.shape(points)[-1])
        return cls(lo=flat.min(axis=0), hi=flat.max(axis=0))

    @property
    def dim(self) -> int:
        return int(self.lo.shape[0])

    @property
    def scale(self) -> np.ndarray:
        return 2.0 / (self.hi - self.lo)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return self.scale * (np.asarray(x, dtype=np.float64) - self.lo) - 1.0

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) + 1.0) / self.scale + self.lo

    def to_dict(self) -> Dict[str, List[float]]:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormalizationStats":
        return cls(lo=np.asarray(data["min"], dtype=np.float64), hi=np.asarray(data["max"], dtype=np.float64))


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def _conic(kind: SpecKind, center: ArrayLike, axes: ArrayLike, dims: Sequence[int], name: str, group: str) -> BarrierSpec:
    center = np.asarray(center, dtype=np.float64).ravel()
    axes = np.asarray(axes, dtype=np.float64).ravel()
    if center.shape != (2,) or axes.shape != (2,) or len(dims) != 2:
        raise InvalidParameterError(f"{kind.value} needs a 2-vector center, 2-vector axes and two dims")
    if np.any(axes <= 0) or not np.all(np.isfinite(axes)):
        raise InvalidParameterError(f"{kind.value} axes must be positive, got {axes.tolist()}")
    params = (float(center[0]), float(center[1]), float(axes[0]), float(axes[1]))
    return BarrierSpec(kind, params, (int(dims[0]), int(dims[1])), name=name, group=group)


def make_ellipse(center: ArrayLike, axes: ArrayLike, dims: Sequence[int] = (0, 1), name: str = "ellipse", group: str = "") -> BarrierSpec:
    """Keep out of an ellipse: b = ((x-x0)/a)^2 + ((y-y0)/b)^2 - 1."""
    return _conic(SpecKind.ELLIPSE, center, axes, dims, name, group)


def make_quartic_superellipse(
    center: ArrayLike, axes: ArrayLike, dims: Sequence[int] = (0, 1), name: str = "quartic_superellipse", group: str = ""
) -> BarrierSpec:
    """Keep out of a rounded box: b = ((x-x0)/a)^4 + ((y-y0)/b)^4 - 1."""
    return _conic(SpecKind.QUARTIC_SUPERELLIPSE, center, axes, dims, name, group)


def make_roof(h_r: float, dim: int, name: str = "roof", group: str = "") -> BarrierSpec:
    """Stay below a roof: b = h_r - z."""
    return BarrierSpec(SpecKind.HALF_SPACE, (float(h_r), 1.0), (int(dim),), name=name, group=group)


def make_speed_dependent_roof(h_r: float, phi: float, dim: int, name: str = "speed_roof", group: str = "") -> BarrierSpec:
    """Stay below a roof with a speed margin: b = h_r - z_k - phi * (z_{k+1} - z_k)."""
    if not phi > 0:
        raise InvalidParameterError(f"phi must be positive, got {phi}")
    return BarrierSpec(SpecKind.SPEED_DEPENDENT_HALF_SPACE, (float(h_r), 1.0, float(phi)), (int(dim),), name=name, group=group)


def _box_limits(x_min: ArrayLike, x_max: ArrayLike, dims: Optional[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray, List[int]]:
    lo = np.asarray(x_min, dtype=np.float64).ravel()
    hi = np.asarray(x_max, dtype=np.float64).ravel()
    if lo.shape != hi.shape:
        raise InvalidParameterError("box limits have different lengths")
    if np.any(hi <= lo):
        raise InvalidParameterError("box needs x_max > x_min componentwise")
    dims = list(range(lo.shape[0])) if dims is None else [int(d) for d in dims]
    if len(dims) != lo.shape[0]:
        raise InvalidParameterError("box dims do not match limit length")
    return lo, hi, dims


def make_joint_box(x_min: ArrayLike, x_max: ArrayLike, dims: Optional[Sequence[int]] = None, name: str = "joint", group: str = "") -> List[BarrierSpec]:
    """x_min <= x <= x_max as 2d half-space rows (upper row then lower row per dimension)."""
    lo, hi, dims = _box_limits(x_min, x_max, dims)
    rows: List[BarrierSpec] = []
    for i, d in enumerate(dims):
        rows.append(BarrierSpec(SpecKind.BOX, (float(hi[i]), 1.0), (d,), name=f"{name}{d}_max", group=group))
        rows.append(BarrierSpec(SpecKind.BOX, (float(lo[i]), -1.0), (d,), name=f"{name}{d}_min", group=group))
    return rows


def make_speed_dependent_box(
    x_min: ArrayLike, x_max: ArrayLike, phi: float, dims: Optional[Sequence[int]] = None, name: str = "joint_speed", group: str = ""
) -> List[BarrierSpec]:
    """x_min <= x + phi * v <= x_max as 2d adjacent-pair rows."""
    if not phi > 0:
        raise InvalidParameterError(f"phi must be positive, got {phi}")
    lo, hi, dims = _box_limits(x_min, x_max, dims)
    rows: List[BarrierSpec] = []
    for i, d in enumerate(dims):
        rows.append(BarrierSpec(SpecKind.SPEED_DEPENDENT_BOX, (float(hi[i]), 1.0, float(phi)), (d,), name=f"{name}{d}_max", group=group))
        rows.append(BarrierSpec(SpecKind.SPEED_DEPENDENT_BOX, (float(lo[i]), -1.0, float(phi)), (d,), name=f"{name}{d}_min", group=group))
    return rows


def terminal_form(spec: BarrierSpec) -> BarrierSpec:
    """Plain single-state version of a pair spec, used at the last planning state."""
    if not spec.is_pair:
        return spec
    limit, sign, _ = spec.params
    return BarrierSpec(_PLAIN_KIND[spec.kind], (limit, sign), spec.dims, name=spec.name, group=spec.group)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _check_states(spec: BarrierSpec, states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2:
        raise DimensionMismatchError(f"expected an (H+1, d) trajectory, got shape {states.shape}")
    if max(spec.dims) >= states.shape[1]:
        raise DimensionMismatchError(f"spec '{spec.name}' reads dim {max(spec.dims)} but states have d={states.shape[1]}")
    return states


def _single_values(spec: BarrierSpec, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Values and gradients of a single-state spec at every row of ``states``."""
    grads = np.zeros_like(states)
    if spec.kind in CONIC_POWER:
        p = CONIC_POWER[spec.kind]
        x0, y0, a, b = spec.params
        i, j = spec.dims
        dx = (states[:, i] - x0) / a
        dy = (states[:, j] - y0) / b
        values = dx**p + dy**p - 1.0
        grads[:, i] = p * dx ** (p - 1) / a
        grads[:, j] = p * dy ** (p - 1) / b
        return values, grads
    limit, sign = spec.params[:2]
    (i,) = spec.dims
    values = sign * (limit - states[:, i])
    grads[:, i] = -sign
    return values, grads


def barrier_values_and_gradients(spec: BarrierSpec, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Evaluate a spec at every planning step of a trajectory.

    Returns:
        values: (H+1,) barrier value per planning step
        grad_own: (H+1, d) gradient with respect to x_k
        grad_next: (H+1, d) gradient with respect to x_{k+1} (zero rows for single-state specs and k = H)
    """
    states = _check_states(spec, states)
    if not spec.is_pair:
        values, grads = _single_values(spec, states)
        return values, grads, np.zeros_like(states)

    limit, sign, phi = spec.params
    (i,) = spec.dims
    z = states[:, i]
    values = np.empty(states.shape[0])
    values[:-1] = sign * (limit - z[:-1] - phi * (z[1:] - z[:-1]))
    values[-1] = sign * (limit - z[-1])
    grad_own = np.zeros_like(states)
    grad_next = np.zeros_like(states)
    grad_own[:-1, i] = -sign * (1.0 - phi)
    grad_own[-1, i] = -sign
    grad_next[:-1, i] = -sign * phi
    return values, grad_own, grad_next


def barrier_values(spec: BarrierSpec, states: np.ndarray) -> np.ndarray:
    """(H+1,) barrier values along a trajectory."""
    return barrier_values_and_gradients(spec, states)[0]


def eval_barrier(spec: BarrierSpec, state: ArrayLike, next_state: Optional[ArrayLike] = None) -> float:
    """b at one state (single-state specs) or one adjacent pair (pair specs)."""
    stacked = _stack_arity(spec, state, next_state)
    return float(barrier_values(spec, stacked)[0])


def eval_gradient(spec: BarrierSpec, state: ArrayLike, next_state: Optional[ArrayLike] = None):
    """
    Gradient of b.

    Returns a d-vector for single-state specs and a ``(d_b/d_x_k, d_b/d_x_k+1)`` pair of
    d-vectors for adjacent-pair specs.
    """
    stacked = _stack_arity(spec, state, next_state)
    _, grad_own, grad_next = barrier_values_and_gradients(spec, stacked)
    if spec.is_pair:
        return grad_own[0], grad_next[0]
    return grad_own[0]


def _stack_arity(spec: BarrierSpec, state: ArrayLike, next_state: Optional[ArrayLike]) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1:
        raise DimensionMismatchError(f"expected a state vector, got shape {state.shape}")
    if spec.is_pair:
        if next_state is None:
            raise DimensionMismatchError(f"spec '{spec.name}' reads an adjacent pair; next_state is required")
        next_state = np.asarray(next_state, dtype=np.float64)
        if next_state.shape != state.shape:
            raise DimensionMismatchError("state and next_state shapes differ")
        return np.stack([state, next_state])
    if next_state is not None:
        raise DimensionMismatchError(f"spec '{spec.name}' reads a single state")
    return state[None, :]


# ---------------------------------------------------------------------------
# Normalization and (de)serialization
# ---------------------------------------------------------------------------


def normalize_spec(spec: BarrierSpec, stats: NormalizationStats) -> BarrierSpec:
    """Rewrite spec parameters under x -> 2 (x - min) / (max - min) - 1 per dimension."""
    if max(spec.dims) >= stats.dim:
        raise DimensionMismatchError(f"stats cover {stats.dim} dims, spec '{spec.name}' reads dim {max(spec.dims)}")
    scale, lo = stats.scale, stats.lo
    if spec.kind in CONIC_POWER:
        x0, y0, a, b = spec.params
        i, j = spec.dims
        params = (
            float(scale[i] * (x0 - lo[i]) - 1.0),
            float(scale[j] * (y0 - lo[j]) - 1.0),
            float(a * scale[i]),
            float(b * scale[j]),
        )
    else:
        (i,) = spec.dims
        limit = float(scale[i] * (spec.params[0] - lo[i]) - 1.0)
        params = (limit,) + tuple(spec.params[1:])
    return BarrierSpec(spec.kind, params, spec.dims, name=spec.name, group=spec.group)


def specs_from_entry(entry: Dict[str, Any]) -> List[BarrierSpec]:
    """
    Build specs from one configuration entry.

    Entries look like ``{"kind": "ellipse", "center": [..], "axes": [..], "dims": [0, 1]}``;
    box kinds expand to several rows.
    """
    kind = str(entry.get("kind", "")).lower()
    name = entry.get("name")
    group = entry.get("group", "")
    extra = {"group": group}
    if name:
        extra["name"] = name
    try:
        if kind == SpecKind.ELLIPSE.value:
            return [make_ellipse(entry["center"], entry["axes"], entry.get("dims", (0, 1)), **extra)]
        if kind == SpecKind.QUARTIC_SUPERELLIPSE.value:
            return [make_quartic_superellipse(entry["center"], entry["axes"], entry.get("dims", (0, 1)), **extra)]
        if kind in ("roof", SpecKind.HALF_SPACE.value):
            return [make_roof(entry["h_r"], _single_dim(entry), **extra)]
        if kind in ("speed_dependent_roof", SpecKind.SPEED_DEPENDENT_HALF_SPACE.value):
            return [make_speed_dependent_roof(entry["h_r"], entry["phi"], _single_dim(entry), **extra)]
        if kind in ("joint_box", SpecKind.BOX.value):
            return make_joint_box(entry["x_min"], entry["x_max"], entry.get("dims"), **extra)
        if kind == SpecKind.SPEED_DEPENDENT_BOX.value:
            return make_speed_dependent_box(entry["x_min"], entry["x_max"], entry["phi"], entry.get("dims"), **extra)
    except KeyError as e:
        raise InvalidParameterError(f"spec entry of kind '{kind}' is missing {e}") from e
    raise InvalidParameterError(f"unknown spec kind '{kind}'")


def _single_dim(entry: Dict[str, Any]) -> int:
    if "dim" in entry:
        return int(entry["dim"])
    dims = entry.get("dims") or [0]
    return int(dims[0])


def spec_to_entry(spec: BarrierSpec) -> Dict[str, Any]:
    """Flat record of one spec, as written into reports and checkpoints."""
    return {
        "kind": spec.kind.value,
        "name": spec.name,
        "group": spec.group,
        "params": list(spec.params),
        "dims": list(spec.dims),
    }

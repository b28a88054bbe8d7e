"""
barrier-diffuser utilities.
Safety specifications, the projection solver, the diffusion planner and its invariance filters.
"""

from .common import apply_defaults, apply_overrides, artifact_header, config_hash, load_json_file, make_rng
from .errors import (
    BarrierDiffuserError,
    CheckpointError,
    ConditioningError,
    ConfigError,
    DatasetError,
    DimensionMismatchError,
    InfeasibleConstraintError,
    InvalidParameterError,
    QPConvergenceError,
    TrainingDivergedError,
)
from .specs import (
    BarrierSpec,
    NormalizationStats,
    SpecKind,
    eval_barrier,
    eval_gradient,
    make_ellipse,
    make_joint_box,
    make_quartic_superellipse,
    make_roof,
    make_speed_dependent_box,
    make_speed_dependent_roof,
    normalize_spec,
)
from .qp import ConstraintRow, ProjectionProblem, ProjectionSolution, solve_projection
from .diffusion import (
    Conditioning,
    DenoiserModel,
    DiffusionSchedule,
    denoise_step,
    forward_noise,
    load_checkpoint,
    make_schedule,
    sample,
    save_checkpoint,
    train,
)
from .invariance import InvarianceConfig, Mode, safe_denoise_step, safe_sample
from .baselines import GuidanceConfig, guided_sample, truncate_sample

__all__ = [
    # Configuration and errors
    "apply_defaults",
    "apply_overrides",
    "artifact_header",
    "config_hash",
    "load_json_file",
    "make_rng",
    "BarrierDiffuserError",
    "CheckpointError",
    "ConditioningError",
    "ConfigError",
    "DatasetError",
    "DimensionMismatchError",
    "InfeasibleConstraintError",
    "InvalidParameterError",
    "QPConvergenceError",
    "TrainingDivergedError",
    # Specs
    "BarrierSpec",
    "NormalizationStats",
    "SpecKind",
    "eval_barrier",
    "eval_gradient",
    "make_ellipse",
    "make_joint_box",
    "make_quartic_superellipse",
    "make_roof",
    "make_speed_dependent_box",
    "make_speed_dependent_roof",
    "normalize_spec",
    # Projection
    "ConstraintRow",
    "ProjectionProblem",
    "ProjectionSolution",
    "solve_projection",
    # Diffusion
    "Conditioning",
    "DenoiserModel",
    "DiffusionSchedule",
    "denoise_step",
    "forward_noise",
    "load_checkpoint",
    "make_schedule",
    "sample",
    "save_checkpoint",
    "train",
    # Invariance and baselines
    "InvarianceConfig",
    "Mode",
    "safe_denoise_step",
    "safe_sample",
    "GuidanceConfig",
    "guided_sample",
    "truncate_sample",
]

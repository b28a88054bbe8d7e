"""Exception hierarchy shared by the library, the nodes and the CLI."""


class BarrierDiffuserError(Exception):
    """Base class for every error raised on purpose by this project."""


class ConfigError(BarrierDiffuserError):
    """A configuration document is missing, unparsable or inconsistent."""


class InvalidParameterError(BarrierDiffuserError, ValueError):
    """A constructor or operation received an out-of-range parameter."""


class DimensionMismatchError(BarrierDiffuserError, ValueError):
    """State or trajectory shapes do not match what an operation expects."""


class InfeasibleConstraintError(BarrierDiffuserError):
    """A hard constraint row can never be satisfied (vanishing gradient)."""


class QPConvergenceError(BarrierDiffuserError):
    """The projection did not reach its tolerance within the sweep budget."""

    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution


class TrainingDivergedError(BarrierDiffuserError):
    """Training produced a non-finite loss."""


class ConditioningError(BarrierDiffuserError):
    """Pinned start/goal states violate a hard specification."""


class CheckpointError(BarrierDiffuserError):
    """A model checkpoint is missing or has an unexpected layout."""


class DatasetError(BarrierDiffuserError):
    """Synthetic data could not be generated for the requested maze."""

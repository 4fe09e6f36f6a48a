"""Exception hierarchy shared by every levylab component."""

from __future__ import annotations

from typing import Optional, Sequence


class LevyLabError(Exception):
    """Base class for all levylab failures."""


class ConfigurationError(LevyLabError, ValueError):
    """Invalid parameters, optionally tied to a dotted config field path."""

    def __init__(self, message: str, field_path: Optional[str] = None) -> None:
        self.field_path = field_path
        if field_path:
            message = f"{field_path}: {message}"
        super().__init__(message)


class GridMismatchError(ConfigurationError):
    """Operands live on different grids."""


class UnderResolvedError(ConfigurationError):
    """A requested scale is finer than the grid or time resolution."""


class PreconditionError(ConfigurationError):
    """An operation precondition does not hold for the given inputs."""


class RadiusOverflowError(PreconditionError):
    """A dyadic radius exceeds half the torus period."""


class ScheduleError(PreconditionError):
    """A molecule schedule step exceeds the admissible increment."""


class ConfigurationMismatchError(PreconditionError):
    """Forward and backward trajectories were not produced from matching setups."""


class QuadratureError(LevyLabError, RuntimeError):
    """Symbol quadrature refinement stalled above tolerance."""

    def __init__(self, message: str, estimates: Sequence[float] = ()) -> None:
        self.estimates = tuple(float(e) for e in estimates)
        if self.estimates:
            message = f"{message} (last estimates: {', '.join(f'{e:.12g}' for e in self.estimates)})"
        super().__init__(message)


class CFLViolationError(LevyLabError, RuntimeError):
    """Explicit drift step is too large for the grid."""


class WindowDegenerateError(LevyLabError, RuntimeError):
    """No local Picard window longer than the time step exists."""


class PicardDivergenceError(LevyLabError, RuntimeError):
    """Picard iteration did not reach tolerance within the iteration budget."""

    def __init__(self, message: str, residual: float, iteration: int) -> None:
        self.residual = float(residual)
        self.iteration = int(iteration)
        super().__init__(f"{message} (iteration {iteration}, residual {residual:.3e})")


class InfeasibleConstantsError(LevyLabError, RuntimeError):
    """The amplification ladder was exhausted without a certified parameter set."""

    def __init__(self, message: str, blocking: Optional[str] = None) -> None:
        self.blocking = blocking
        if blocking:
            message = f"{message} (blocking: {blocking})"
        super().__init__(message)


class FitError(LevyLabError, RuntimeError):
    """A fitted slope is too noisy to report."""


class FieldFormatError(LevyLabError, ValueError):
    """A binary field file is malformed."""

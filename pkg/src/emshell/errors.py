"""Exception taxonomy. Each failure class maps to a distinct CLI exit code."""


class EmshellError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class InvalidArgumentError(EmshellError, ValueError):
    """Bad user input (non-positive sizes, non-tangential densities, ...)."""

    exit_code = 2


class GeometryError(EmshellError):
    """Inconsistent or degenerate geometry (intersecting shells, open meshes)."""

    exit_code = 3


class SingularityError(EmshellError):
    """Kernel evaluated at (or numerically on top of) its singular point."""

    exit_code = 4


class LinearSolveError(EmshellError):
    """A linear solve failed to reach its tolerance.

    Carries the achieved relative residual so callers can report it.
    """

    exit_code = 5

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class IllConditionedError(LinearSolveError):
    """Condition estimate of a factorized operator exceeded its bound."""

    exit_code = 6


class AccuracyError(EmshellError):
    """Requested evaluation cannot meet accuracy (e.g. target too close to a
    singular support without the regularized path)."""

    exit_code = 7


class DomainError(EmshellError):
    """Evaluation requested at a point outside the operator's domain."""

    exit_code = 8


class OracleError(EmshellError):
    """An independent reference computation failed to converge."""

    exit_code = 9


class ContractError(EmshellError):
    """An input violated a documented operation contract."""

    exit_code = 10


class PreconditionError(EmshellError):
    """A stated precondition (frequency band, material restriction) failed."""

    exit_code = 11


class ConfigError(EmshellError):
    """Configuration parse/validation failure, with field diagnostics."""

    exit_code = 12

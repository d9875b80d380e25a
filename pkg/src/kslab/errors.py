"""Exception types shared across the package.

Configuration problems (bad grids, invalid interaction parameters, malformed
config files) are kept distinct from numerical failures (solver breakdown,
violated compatibility conditions) so the command line tool can map them to
different exit codes.
"""


class KslabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(KslabError, ValueError):
    """Invalid user-supplied configuration or precondition violation at setup."""


class NumericalError(KslabError, RuntimeError):
    """A numerical stage failed or produced out-of-contract results."""


class SolverError(NumericalError):
    """Iterative or direct linear algebra failed to converge."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history) if residual_history else []


class CompatibilityError(NumericalError):
    """Initial-condition compatibility between target and constructed state fails."""


class PropagationError(NumericalError):
    """Time propagation failed (linear solve breakdown, non-finite state)."""


class ExperimentError(NumericalError):
    """A verification pipeline stage failed; carries the stage tag."""

    def __init__(self, stage, message):
        super().__init__(f"[stage: {stage}] {message}")
        self.stage = stage

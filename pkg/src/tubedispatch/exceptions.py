"""Exception hierarchy shared across the package."""


class TubeDispatchError(Exception):
    """Base class for all package errors."""


class ConfigError(TubeDispatchError, ValueError):
    """Invalid parameter value or configuration file content."""


class DataError(TubeDispatchError, ValueError):
    """Malformed or inconsistent time-series input."""


class ConstraintViolation(TubeDispatchError):
    """A state update left the admissible region."""


class InfeasibleError(TubeDispatchError):
    """An optimisation problem has no feasible point.

    ``certificate`` holds the dual ray returned by the solver when one is
    available; ``slot`` and ``stage`` locate the failure inside a closed-loop
    run.
    """

    def __init__(self, message, *, certificate=None, slot=None, stage=None):
        super().__init__(message)
        self.certificate = certificate
        self.slot = slot
        self.stage = stage


class SolverError(TubeDispatchError):
    """The solver stopped without reaching its tolerances."""


class RatioDomainError(TubeDispatchError, ValueError):
    """Competitive ratio requested for a non-positive offline cost."""

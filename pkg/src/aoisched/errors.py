"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration / schema problems exit
with 2, numeric or convergence failures with 3.
"""


class SchedulerError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(SchedulerError):
    """Invalid configuration, malformed input file, or impossible geometry."""

    exit_code = 2


class ConvergenceError(SchedulerError):
    """An iterative solve did not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SolverError(SchedulerError):
    """A linear solve failed or produced an untrustworthy result."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class UnsupportedCaseError(SchedulerError):
    """Operation called outside the parameter regime it supports."""


class InfiniteAoIError(SchedulerError):
    """Effective service rate is zero, so the average age diverges."""


class NumericsError(SchedulerError):
    """Non-finite value encountered where a finite one is required."""

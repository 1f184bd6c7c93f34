"""Exception hierarchy.

Each class carries the process exit code the command line maps it to.
"""


class FirstExitError(Exception):
    exit_code = 1


class ConfigError(FirstExitError, ValueError):
    """Malformed configuration or an invalid parameter combination."""

    exit_code = 2


class ParameterError(ConfigError):
    """Model parameters outside their admissible range."""


class ConvergenceError(FirstExitError, RuntimeError):
    """An iterative solver ran out of iterations."""

    exit_code = 3

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PreconditionError(FirstExitError, ValueError):
    """An operation was called outside its domain."""

    exit_code = 4


class NoRootError(FirstExitError, RuntimeError):
    def __init__(self, message, interval):
        super().__init__(f"{message} (scanned interval {interval[0]:g} .. {interval[1]:g})")
        self.interval = interval


class UnsupportedModelError(FirstExitError, NotImplementedError):
    exit_code = 2


class EmptySampleError(PreconditionError):
    pass


class CensoringError(FirstExitError, RuntimeError):
    pass


class FitError(PreconditionError):
    pass


class OutOfRangeError(PreconditionError):
    """An asymptotic approximation evaluated where it is not a probability."""


class DivergenceWarning(RuntimeWarning):
    """The chain has nonnegative drift; a stationary law may not exist."""

"""Exception hierarchy shared by all modules."""


class PerfhomError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PerfhomError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(PerfhomError, ValueError):
    """Fields, masks or grids do not match."""


class ResolutionError(DomainError):
    """The grid is too coarse to represent a hole.

    ``required_n`` carries the smallest nodes-per-axis count that would
    satisfy the resolution precondition, when it can be computed.
    """

    def __init__(self, message, required_n=None):
        super().__init__(message)
        self.required_n = required_n


class ConvergenceError(PerfhomError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual, iterations):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class ConfigError(PerfhomError, ValueError):
    """A configuration document or generator spec is invalid."""

    def __init__(self, key, reason):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason

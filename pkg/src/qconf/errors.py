"""Exception hierarchy shared by all qconf modules."""


class QconfError(Exception):
    """Base class for toolkit errors."""


class ParameterError(QconfError, ValueError):
    """An argument violates an operation's preconditions."""


class DomainError(QconfError, ValueError):
    """A point or region lies outside the natural domain of a map or domain."""


class SingularityError(QconfError, ArithmeticError):
    """Derivative data requested at a singular or degenerate point."""


class UnsupportedMapError(QconfError):
    """The map lacks an analytic inverse needed by the operation."""


class ResolutionError(QconfError):
    """The grid resolution is too coarse (too few nodes or a disconnected mask)."""


class InconclusiveError(QconfError):
    """A numerical procedure exhausted its budget without a verdict."""


class NonConvergenceError(QconfError):
    """An iterative solver hit its iteration cap.

    ``best`` carries the best available value when one exists.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class PoleError(ParameterError):
    """A closed-form expression is evaluated at one of its poles."""

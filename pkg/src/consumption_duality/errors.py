"""Exception hierarchy shared by the solvers."""


class DualityLabError(Exception):
    """Base class for every error raised by this package."""


class DomainError(DualityLabError, ValueError):
    """An argument lies outside the domain of a utility-related function."""


class UnboundedConjugateError(DualityLabError, ArithmeticError):
    """The supremum defining a convex conjugate is not attained."""


class TreeSizeError(DualityLabError, ValueError):
    pass


class NoDeflatorError(DualityLabError):
    """A one-step martingale polytope is empty (one-step arbitrage).

    On a tree this is the desk-scale form of a NUPBR failure: no positive
    deflator can exist.
    """

    def __init__(self, node, message=None):
        self.node = node
        super().__init__(message or f"martingale polytope at node {node} is empty")


class InvalidMeasureError(DualityLabError, ValueError):
    pass


class DualInfiniteError(DualityLabError):
    pass


class CalibrationError(DualityLabError):
    pass


class OracleError(DualityLabError):
    """The direct primal solver failed to converge."""


class DecompositionError(DualityLabError):
    pass


class StatisticsError(DualityLabError, ValueError):
    pass


class StageError(DualityLabError):
    """Wraps a sub-solver failure with the name of the stage that raised it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")

"""Exception hierarchy shared by all modules."""


class SplittingError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(SplittingError, ValueError):
    pass


class MetricError(SplittingError, ValueError):
    """A matrix is not symmetric positive definite, or its bounds are wrong."""


class UnsupportedMetricError(SplittingError, ValueError):
    """A closed-form resolvent is not available in the requested metric."""


class ParameterWindowError(SplittingError, ValueError):
    """A step size or relaxation parameter left its admissible window.

    Attributes
    ----------
    window : str
        Short name of the violated window, e.g. ``"lambda window"``.
    n : int or None
        First iteration index at which the violation occurs.
    """

    def __init__(self, window, message, n=None):
        self.window = window
        self.n = n
        where = "" if n is None else f" at n={n}"
        super().__init__(f"{window}{where}: {message}")


class ScheduleValidationError(SplittingError, ValueError):
    """Raised when a hypothesis report fails in strict mode."""

    def __init__(self, report):
        self.report = report
        first = report.first_failure()
        msg = "validation failed" if first is None else first.describe()
        super().__init__(msg)


class NumericalError(SplittingError, ArithmeticError):
    """Non-finite values appeared during an iteration."""

    def __init__(self, n, message="non-finite iterate"):
        self.n = n
        super().__init__(f"{message} at n={n}")


class AdjointError(SplittingError, ValueError):
    """A linear map and its declared adjoint disagree."""


class OracleError(SplittingError, RuntimeError):
    """A reference solver failed to certify its solution."""


class UnknownProblemError(SplittingError, LookupError):
    """A run-spec names a problem that is not in the registry."""

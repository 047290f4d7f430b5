"""Exception hierarchy shared by every hydrofit module."""


class HydrofitError(Exception):
    """Base class for all library errors."""


class ParseError(HydrofitError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(HydrofitError):
    pass


class InvariantError(HydrofitError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class TooShort(HydrofitError):
    pass


class InsufficientTrajectories(HydrofitError):
    pass


class MissingDerivatives(HydrofitError):
    pass


class DegenerateColumn(HydrofitError):
    pass


class ExpOverflow(HydrofitError):
    """Raised when an exponent beta*v exceeds the overflow guard."""


class MissingLags(HydrofitError):
    pass


class ShapeMismatch(HydrofitError):
    pass


class RankDeficient(HydrofitError):
    def __init__(self, message, cond=None):
        self.cond = cond
        super().__init__(message)


class NoConvergence(HydrofitError):
    pass


class NoConvergenceWarning(UserWarning):
    """LM restarts hit the iteration cap; the best iterate is still returned."""


class HighestTermWarning(UserWarning):
    """Highest-degree polynomial coefficient is numerically zero."""


class Diverged(HydrofitError):
    pass


class LengthMismatch(HydrofitError):
    pass


class DegenerateTarget(HydrofitError):
    pass


class TooFewSamples(HydrofitError):
    pass


class UnsupportedFamily(HydrofitError):
    pass


class NoFixedPoint(HydrofitError):
    pass

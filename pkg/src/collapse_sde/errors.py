"""Exception types raised by the simulation library."""


class CollapseError(Exception):
    """Base class for all library errors."""


class NonNormalizable(CollapseError, ValueError):
    pass


class GridEscape(CollapseError):
    """Too much probability mass sits near the edge of the periodic grid."""

    def __init__(self, fraction, tol, time_index=None):
        self.fraction = fraction
        self.tol = tol
        self.time_index = time_index
        where = "" if time_index is None else f" at time index {time_index}"
        super().__init__(
            f"boundary mass fraction {fraction:.3e} exceeds {tol:.1e}{where}"
        )


class ZeroNorm(CollapseError, ArithmeticError):
    pass


class StepTooLarge(CollapseError, ValueError):
    pass


class CorruptIncrement(CollapseError, ValueError):
    """A noise increment is implausibly large for its time step."""


class LengthMismatch(CollapseError, ValueError):
    pass


class NonCommuting(CollapseError, ValueError):
    pass


class BlowUp(CollapseError, ArithmeticError):
    def __init__(self, message, time_index=None):
        self.time_index = time_index
        super().__init__(message)


class InsufficientSpan(CollapseError, ValueError):
    pass


class RecurrenceOverflow(CollapseError, OverflowError):
    pass


class IllConditioned(CollapseError):
    def __init__(self, residual, limit):
        self.residual = residual
        self.limit = limit
        super().__init__(f"reconstruction residual {residual:.3e} exceeds {limit:.1e}")


class BadWeights(CollapseError, ValueError):
    pass


class NotCollapsed(CollapseError):
    pass


class ConfigInvalid(CollapseError, ValueError):
    pass


class StepFailure(CollapseError):
    """Wraps an error raised while stepping, tagged with the failing time index."""

    def __init__(self, cause, time_index):
        self.cause = cause
        self.time_index = time_index
        super().__init__(f"{type(cause).__name__} at time index {time_index}: {cause}")

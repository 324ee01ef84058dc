"""Exception types raised across the package."""


class ApseError(Exception):
    """Base class for all package errors."""


class MalformedGraphError(ApseError):
    pass


class DimensionError(ApseError, ValueError):
    pass


class DegenerateStateError(ApseError, ValueError):
    """A voltage with zero magnitude, or a zero expansion point."""


class MeasurementError(ApseError, ValueError):
    pass


class ObservabilityError(ApseError):
    """Weighted measurement Jacobian is rank deficient."""

    def __init__(self, message, rank=None, columns=None):
        super().__init__(message)
        self.rank = rank
        self.columns = columns


class ConditioningError(ApseError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class DegenerateBasisError(ApseError):
    pass


class InfeasibleSampleError(ApseError):
    """Power flow failed to converge for a sampled load vector."""

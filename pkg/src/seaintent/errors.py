"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Raised when an input violates a shape, range or consistency contract."""


class InsufficientData(ValueError):
    """Raised when an operation needs more points than it was given."""


class InvalidState(RuntimeError):
    """Raised when an object is used before the artifacts it needs exist."""


class NonFiniteError(FloatingPointError):
    """Raised when a tensor operation produces NaN or Inf."""

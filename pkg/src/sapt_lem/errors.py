"""Exception types raised across the package."""


class DimensionMismatch(ValueError):
    pass


class NumericalOverflow(ArithmeticError):
    """Raised when the forward model produces non-finite elevations."""


class UnknownKind(ValueError):
    pass


class InsufficientHistory(ValueError):
    pass


class FactorizationFailure(ValueError):
    """Covariance matrix is not symmetric positive definite."""


class SurrogateNotReady(RuntimeError):
    pass


class EmptyDataset(ValueError):
    pass


class ConfigError(ValueError):
    pass


class DegenerateChains(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyPosterior(ValueError):
    pass


class InsufficientRuns(ValueError):
    pass


class IoError(OSError):
    """Missing, empty or unwritable input/output file."""

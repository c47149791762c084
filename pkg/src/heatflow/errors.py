"""Exception hierarchy shared by all heatflow modules."""


class HeatflowError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 3


class ChartViolation(HeatflowError):
    """A point left the admissible region of the target chart."""


class ShapeMismatch(HeatflowError, ValueError):
    pass


class BaseMismatch(HeatflowError, ValueError):
    """Two sections live over different base maps."""


class PeriodicityError(HeatflowError, ValueError):
    """A map on a periodic domain does not close up in the target."""


class StabilityGuard(HeatflowError, ValueError):
    """Time step exceeds the explicit stability bound."""


class NoConvergence(HeatflowError):
    def __init__(self, message, best_residual=float("nan"), iterations=0):
        super().__init__(message)
        self.best_residual = best_residual
        self.iterations = iterations


class ZeroSection(HeatflowError, ValueError):
    pass


class InsufficientSnapshots(HeatflowError, ValueError):
    pass


class EmptyWindow(HeatflowError, ValueError):
    pass


class NotConverged(HeatflowError):
    pass


class DegenerateLimit(HeatflowError):
    """The limit map has a Jacobi kernel, so no rate is guaranteed."""


class ConfigError(HeatflowError):
    exit_code = 2


class ParseError(ConfigError):
    def __init__(self, message, line=None, key=None):
        super().__init__(message)
        self.line = line
        self.key = key


class ValidationError(ConfigError):
    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class NonMonotoneEnergy(UserWarning):
    """Energy went up between two trajectory samples."""

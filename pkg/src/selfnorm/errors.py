"""Exception types shared across the package."""


class SelfNormError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(SelfNormError, ValueError):
    pass


class DiscreteLawError(SelfNormError, ValueError):
    """A density was requested from a law with atoms."""


class UnknownKernelError(SelfNormError, KeyError):
    pass


class ArityError(SelfNormError, ValueError):
    pass


class TooLargeError(SelfNormError, ValueError):
    """Exact enumeration would exceed the configured evaluation cap."""


class BudgetExceededError(TooLargeError):
    pass


class DegenerateKernelError(SelfNormError, ValueError):
    pass


class ZeroVarianceError(SelfNormError, ZeroDivisionError):
    pass


class OutOfRangeError(SelfNormError, ValueError):
    pass


class InfiniteMomentError(SelfNormError, ValueError):
    pass


class DegenerateWeightsError(SelfNormError, RuntimeError):
    pass


class ConfigError(SelfNormError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)

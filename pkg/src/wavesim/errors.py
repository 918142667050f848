"""Exception types shared across the package."""


class WavesimError(Exception):
    """Base class for package errors."""


class ConfigurationError(WavesimError, ValueError):
    """Malformed or inconsistent configuration input."""


class QueryError(WavesimError, KeyError):
    """Lookup of something that does not exist (unknown layer, scenario, ...)."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ContractViolation(WavesimError, ValueError):
    """An operation was called outside its precondition."""


class UndefinedEstimateError(WavesimError, ArithmeticError):
    """A requested statistic has no defined value (e.g. zero denominator)."""

"""Exception hierarchy shared by every stage of the package."""


class HetCobbError(Exception):
    """Base class for all package errors."""


class ConfigError(HetCobbError, ValueError):
    """Invalid or inconsistent configuration."""


class DomainError(HetCobbError, ValueError):
    """An argument lies outside the domain of a technology map."""


class PreconditionError(HetCobbError, ValueError):
    """A structural precondition (e.g. diminishing flexible returns) fails."""


class DataError(HetCobbError, ValueError):
    """Malformed, missing or non-finite data."""


class SchemaError(DataError):
    """Dataset columns do not match what the model variant needs."""


class InsufficientDataError(DataError):
    """Too few observations for the requested computation."""


class NumericalError(HetCobbError, RuntimeError):
    """A numerical routine failed to deliver a usable answer."""


class OracleFailure(NumericalError):
    """The brute-force test oracle did not converge."""

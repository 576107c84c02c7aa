"""Exception types shared across the package."""


class ProxmcError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ProxmcError):
    """Invalid sizes, parameters, or option combinations."""


class ConstructionError(ProxmcError):
    """An operator could not be built (e.g. rank deficiency)."""


class DomainError(ProxmcError):
    """Evaluation requested outside the feasible set."""


class DataError(ProxmcError):
    """Bad input data: parse failures, unknown lookups, range violations."""


class InitializationError(ProxmcError):
    """No feasible chain starting point could be found."""


class DivergenceError(ProxmcError):
    """An iterative solver produced non-finite values."""

class RWRSError(Exception):
    """Base class for library errors."""


class UsageError(RWRSError, ValueError):
    """Arguments are malformed (wrong dimension, bad key, ...)."""


class DomainError(RWRSError, ValueError):
    """A numeric argument lies outside the domain of a formula."""


class UnsupportedOperation(RWRSError, TypeError):
    pass


class IntegrityError(RWRSError):
    """Inputs are individually valid but inconsistent with each other."""


class ResourceError(RWRSError):
    """A request would exceed a configured memory or horizon budget.

    ``suggestion`` names a config change that avoids the limit.
    """

    def __init__(self, message, suggestion=None):
        super().__init__(message)
        self.suggestion = suggestion


class ConfigError(RWRSError):
    """Config text could not be parsed or contains unknown keys."""

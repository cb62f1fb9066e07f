"""Exception hierarchy shared by all chanex modules."""


class ChanexError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(ChanexError):
    """Invalid configuration: bad parameters, schema violations, shape mismatches.

    May carry a list of offending fields in ``fields``.
    """

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = list(fields) if fields else []


class DomainError(ChanexError):
    """Input is outside the mathematical domain of an operation."""


class UsageError(ChanexError):
    """An API was called in a way its contract forbids."""


class TrainingError(ChanexError):
    """A training run failed (e.g. diverged); carries the config hash."""

    def __init__(self, message, config_hash=None):
        super().__init__(message)
        self.config_hash = config_hash

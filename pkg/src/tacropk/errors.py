"""Exception hierarchy shared across the toolkit."""


class TacroPKError(Exception):
    """Base class for all toolkit errors."""


class DomainError(TacroPKError, ValueError):
    """A quantity is outside its physical/mathematical domain."""


class ConfigurationError(TacroPKError, ValueError):
    """A model, prior, or file is internally inconsistent."""


class DataError(TacroPKError, ValueError):
    """An input dataset violates the dataset contract."""

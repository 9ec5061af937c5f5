"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """An inadmissible combination of law, equation kind or problem settings."""


class DomainError(ValueError):
    """An argument outside the mathematical domain of an operation."""

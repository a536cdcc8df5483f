"""Exception types shared across the package."""


class ConvlabError(Exception):
    """Base class for package errors."""


class ConfigError(ConvlabError):
    """Raised on malformed or inconsistent run configuration (CLI exit 2)."""


class NumericalError(ConvlabError):
    """Raised on numerical failure such as overflow or a singular solve (CLI exit 3)."""


class CflError(NumericalError):
    """Raised when an explicit advection step violates its CFL limit."""

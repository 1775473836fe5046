"""Exception types shared across the package."""


class ForestError(Exception):
    """Base class for all errors raised by sparseforest."""


class DimensionError(ForestError, ValueError):
    """Array shapes or lengths do not agree."""


class NumericError(ForestError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class InputError(ForestError, ValueError):
    """Input is well-shaped but semantically invalid (empty, out of range...)."""


class ParseError(InputError):
    """A CSV cell could not be parsed."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class FormatError(ForestError, ValueError):
    """A file does not follow the expected layout."""


class ConfigError(ForestError, ValueError):
    """Invalid configuration value or combination."""

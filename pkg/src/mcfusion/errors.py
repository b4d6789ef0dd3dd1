"""Exception hierarchy shared across the package."""


class FusionError(Exception):
    """Base class for all package errors."""


class ParseError(FusionError):
    """A JSON Lines input could not be parsed."""

    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class ValidationError(FusionError):
    """Input data or configuration violates a documented invariant."""


class ExhaustedError(FusionError):
    """A fallback or candidate source ran out before the target size was reached."""


class NumericalError(FusionError):
    """A non-finite value appeared where a finite one is required."""

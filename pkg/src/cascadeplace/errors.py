"""Exception types shared across the package."""


class CascadePlaceError(Exception):
    """Base class for all package errors."""


class ConfigError(CascadePlaceError, ValueError):
    """Invalid configuration value or missing required setting."""


class ParseError(CascadePlaceError, ValueError):
    """Malformed record in an input file."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class ValidationError(CascadePlaceError, ValueError):
    """A value parsed correctly but violates a domain invariant."""


class ShapeError(CascadePlaceError, ValueError):
    """Array shapes do not line up."""


class InfeasibleError(CascadePlaceError):
    """Replica capacity cannot cover the demand."""

    def __init__(self, message, shortfall=None):
        super().__init__(message)
        self.shortfall = shortfall


class StageError(CascadePlaceError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

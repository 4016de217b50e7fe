"""Exception types shared across the package."""


class TextAdvError(Exception):
    """Base class for all package-specific errors."""


class ParseError(TextAdvError):
    """A file or record could not be parsed.

    Carries the 1-based line/record number when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class FormatError(TextAdvError):
    """A file parsed but violates its declared format (e.g. inconsistent dims)."""


class ConfigError(TextAdvError):
    """Invalid or contradictory configuration."""


class BudgetExceededError(TextAdvError):
    """The query budget attached to a classifier has been exhausted."""


class TransportError(TextAdvError):
    """A remote classifier could not be reached after retries."""

    def __init__(self, message: str, attempts: int = 0, last_status: int | None = None):
        self.attempts = attempts
        self.last_status = last_status
        super().__init__(message)


class ProtocolError(TextAdvError):
    """A remote classifier answered with a schema-violating response."""


class CompatibilityError(TextAdvError):
    """A persisted model does not match the embedding table it is used with."""

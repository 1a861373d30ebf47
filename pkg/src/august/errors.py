"""Exception types raised across the package."""


class AugustError(Exception):
    """Base class for all package errors."""


class ParseError(AugustError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ParseError):
    """Input parsed but violates a domain constraint (score range, duplicates)."""


class NotFoundError(AugustError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ResolutionError(AugustError, ValueError):
    """A dialogue mention names an entity the knowledge graph does not know."""

    def __init__(self, message, sample_id=None):
        self.sample_id = sample_id
        super().__init__(message)


class EmptyGraphError(AugustError, ValueError):
    pass


class SegmentationError(AugustError, ValueError):
    pass


class InitError(AugustError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TrainingAborted(AugustError, FloatingPointError):
    pass

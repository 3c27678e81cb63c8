"""Exception hierarchy shared across the toolkit."""


class NasForgeError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(NasForgeError, ValueError):
    """A model, block, space or config document violates its contract."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class SchemaError(ValidationError):
    """A structured-text document has the wrong shape.

    ``path`` names the offending location, e.g. ``blocks[2].k``.
    """

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class EvaluatorUnavailable(NasForgeError):
    """The evaluator itself is gone (e.g. lost connection); a search must stop
    instead of recording failed trials."""

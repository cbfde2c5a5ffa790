"""Exception hierarchy shared by all modules."""


class PathwiseError(Exception):
    """Base class for every error raised by :mod:`pathwise`."""


class ValidationError(PathwiseError, ValueError):
    """Input data violates a structural invariant (monotone grid, shapes)."""


class DomainError(PathwiseError, ValueError):
    """An argument lies outside the domain of the operation."""


class ParseError(ValidationError):
    """Malformed CSV / JSON input.  Carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PartitionTooLarge(DomainError):
    """A Lebesgue partition would exceed the configured number of times."""


class PreconditionError(PathwiseError, ValueError):
    """Caller-supplied parameters do not satisfy a check's precondition."""


class BoundViolation(PathwiseError, RuntimeError):
    """An inequality that must hold by construction was found violated."""

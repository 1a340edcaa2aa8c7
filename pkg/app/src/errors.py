"""
Exception hierarchy shared by every homlab module.
"""

from typing import Any, Dict, Optional, Sequence


class HomLabError(Exception):
    """Base class for all homlab errors."""


class DomainError(HomLabError, ValueError):
    """A physical or mathematical argument is outside the model's domain."""


class AccuracyError(DomainError):
    """A numerical setting cannot deliver the requested accuracy."""


class EmptyRequestError(DomainError):
    pass


class RootNotBracketedError(DomainError):
    pass


class UndefinedVisibilityError(DomainError):
    pass


class InvariantViolation(HomLabError):
    """An internal invariant does not hold (a bug or a corrupted input)."""


class PreconditionError(HomLabError, ValueError):
    pass


class ConfigError(HomLabError):
    pass


class FormatError(HomLabError):
    """Malformed binary or text data.

    Carries the byte offset (and record index where one applies) of the
    first offending byte so that callers can report it.
    """

    def __init__(
        self,
        message: str,
        offset: int,
        record: Optional[int] = None,
    ):
        location = f"byte offset {offset}"
        if record is not None:
            location += f", record {record}"
        super().__init__(f"{message} ({location})")
        self.offset = offset
        self.record = record


class EvaluationError(HomLabError):
    """A model returned non-finite values for a parameter vector."""

    def __init__(self, message: str, params: Sequence[float], names=None):
        self.params = [float(p) for p in params]
        self.names = list(names) if names is not None else None
        super().__init__(f"{message}: {self.describe_params()}")

    def describe_params(self) -> Dict[str, Any]:
        if self.names is None:
            return {str(i): p for i, p in enumerate(self.params)}
        return dict(zip(self.names, self.params))

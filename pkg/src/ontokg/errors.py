"""Exception hierarchy shared across the package."""

from __future__ import annotations


class OntoKGError(Exception):
    pass


class InvalidArgumentError(OntoKGError, ValueError):
    pass


class NotFoundError(OntoKGError, LookupError):
    pass


class SchemaError(OntoKGError, ValueError):
    pass


class SchemaParseError(SchemaError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateIdError(SchemaError):
    pass


class DanglingReferenceError(SchemaError):
    pass


class SnapshotError(OntoKGError, ValueError):
    """Malformed or version-incompatible snapshot file."""


class LlmError(OntoKGError):
    """Base for failures a pipeline stage is allowed to degrade on."""


class TransportError(LlmError):
    """Backend could not be reached; safe to retry."""

    retryable = True


class MalformedOutputError(LlmError):
    def __init__(self, message: str, last_raw: str, attempts: int,
                 last_error: str | None = None, usage=None) -> None:
        super().__init__(message)
        self.usage = usage
        self.last_raw = last_raw
        self.attempts = attempts
        self.last_error = last_error


class FixtureMissError(OntoKGError):
    """Scripted backend has no recorded response for a prompt.

    Deliberately not an LlmError: pipeline stages must never swallow it.
    """

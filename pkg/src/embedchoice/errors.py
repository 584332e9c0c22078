"""Exception hierarchy shared by every module."""

from __future__ import annotations


class EmbedChoiceError(Exception):
    """Base class for package errors."""


class ValidationError(EmbedChoiceError):
    """Input data violates a schema or domain invariant."""


class ParseError(ValidationError):
    """A file row could not be parsed.

    Attributes:
        path: File being read.
        line: 1-based line number of the offending row (header is line 1).
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MissingArtifactError(ValidationError):
    """An upstream file required by a command is absent."""


class NumericalError(EmbedChoiceError):
    """A numerical routine produced a non-finite or otherwise unusable result."""

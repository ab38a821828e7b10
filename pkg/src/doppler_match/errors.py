"""Exception hierarchy shared by every module."""

from __future__ import annotations


class DopplerMatchError(Exception):
    """Base class for all package errors."""


# registration ---------------------------------------------------------------


class RegistrationError(DopplerMatchError):
    """A single frame could not be registered."""


class EmptyScan(RegistrationError, ValueError):
    pass


class InsufficientCorrespondences(RegistrationError):
    pass


class DegenerateConfiguration(RegistrationError):
    pass


# simulator ------------------------------------------------------------------


class ZeroRangePoint(DopplerMatchError, ValueError):
    pass


# io -------------------------------------------------------------------------


class FormatError(DopplerMatchError, ValueError):
    """Malformed file content. Carries the offending path and line number."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if self.path is not None:
            where = self.path if line is None else f"{self.path}:{line}"
            where += ": "
        super().__init__(where + message)


class MalformedHeader(FormatError):
    pass


class RowParseError(FormatError):
    pass


class FieldCountError(FormatError):
    pass


class QuaternionNormError(FormatError):
    pass


class IoFailure(DopplerMatchError, OSError):
    pass


class ConfigError(FormatError):
    pass


class UnknownKey(ConfigError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0] if self.args else ""


class ConfigTypeError(ConfigError, TypeError):
    def __init__(self, key: str, value: str, expected: str, path=None, line=None):
        self.key = key
        super().__init__(f"{key}: expected {expected}, got {value!r}", path, line)


class MissingRequired(ConfigError):
    pass


# evaluation -----------------------------------------------------------------


class TimestampMismatch(DopplerMatchError, ValueError):
    pass


class LengthUnreachable(DopplerMatchError, ValueError):
    pass


class EmptyInput(DopplerMatchError, ValueError):
    pass

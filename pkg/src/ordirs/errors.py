"""Exception hierarchy shared by every subsystem."""

from __future__ import annotations

from typing import Any, Sequence


class OrdirsError(Exception):
    """Base class for all package errors."""


class InputError(OrdirsError, ValueError):
    """Caller passed malformed or inconsistent arguments."""


class CorruptMaskError(InputError):
    pass


class EmptyMaskError(InputError):
    pass


class StreamOrderError(OrdirsError):
    pass


class StreamParseError(OrdirsError):
    def __init__(self, message: str, line: int, offset: int | None = None):
        where = f"line {line}" if offset is None else f"line {line}, offset {offset}"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.offset = offset


class BackendError(OrdirsError):
    """Any failure talking to a perception or language-model backend."""


class TransportError(BackendError):
    def __init__(self, message: str, *, route: str = "", attempts: int = 0, retryable: bool = True):
        super().__init__(message)
        self.route = route
        self.attempts = attempts
        self.retryable = retryable


class ProtocolError(BackendError):
    pass


class CassetteError(BackendError):
    pass


class NoRuleError(BackendError):
    def __init__(self, schema: str, digest: str):
        super().__init__(f"no scripted rule for schema {schema!r} (prompt digest {digest})")
        self.schema = schema
        self.digest = digest


class CapabilityMissingError(OrdirsError):
    pass


class FilterSyntaxError(OrdirsError):
    def __init__(self, message: str, position: int, text: str = ""):
        super().__init__(f"{message} at offset {position}")
        self.position = position
        self.text = text


class PlanError(OrdirsError):
    def __init__(self, message: str, transcripts: Sequence[Any] = ()):
        super().__init__(message)
        self.transcripts = list(transcripts)


class RequirementError(OrdirsError):
    pass


class ConsistencyError(OrdirsError):
    pass


class ProgramError(OrdirsError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigError(OrdirsError):
    pass


class ScenarioError(OrdirsError):
    pass

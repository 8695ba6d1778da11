from typing import Any, List, Optional


class CiteGuardError(Exception):
    """Base class for every failure raised by the verification engine."""


class ContractViolation(CiteGuardError, ValueError):
    pass


class TransportError(CiteGuardError):
    """Network / HTTP level failure talking to a backend. Retried by the gateway."""

    def __init__(self, backend_id: str, message: str):
        super().__init__(f"[{backend_id}] {message}")
        self.backend_id = backend_id


class RetryableBackendError(CiteGuardError):
    def __init__(self, backend_id: str, attempts: int, cause: Optional[BaseException] = None):
        super().__init__(f"backend '{backend_id}' failed after {attempts} attempts: {cause}")
        self.backend_id = backend_id
        self.attempts = attempts
        self.cause = cause


class BackendParseError(CiteGuardError):
    def __init__(self, message: str, raw: Any = None):
        super().__init__(message)
        self.raw = raw


class MarkupParseError(CiteGuardError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, col {column})")
        self.line = line
        self.column = column


class InconclusiveError(CiteGuardError):
    """The metadata client could not be reached; distinct from a Ghost verdict."""

    def __init__(self, key: str, message: str):
        super().__init__(f"inconclusive for '{key}': {message}")
        self.key = key


class UnderspecifiedClaim(CiteGuardError):
    def __init__(self, occurrence_id: str, radius: int):
        super().__init__(f"claim for {occurrence_id} still underspecified at radius {radius}")
        self.occurrence_id = occurrence_id
        self.radius = radius


class LabelingError(CiteGuardError):
    def __init__(self, message: str, raw_replies: List[str]):
        super().__init__(message)
        self.raw_replies = raw_replies


class BenchmarkSchemaError(CiteGuardError):
    def __init__(self, message: str, rows: Optional[List[int]] = None):
        super().__init__(message)
        self.rows = rows or []


class RaggedSamplesError(CiteGuardError):
    def __init__(self, instance_index: int, count: int):
        super().__init__(f"instance {instance_index} has {count} samples, expected 3")
        self.instance_index = instance_index
        self.count = count


class UndefinedResultError(CiteGuardError):
    pass


class ConfigError(CiteGuardError):
    def __init__(self, message: str, fields: Optional[List[str]] = None):
        self.fields = fields or []
        detail = f" ({', '.join(self.fields)})" if self.fields else ""
        super().__init__(f"{message}{detail}")

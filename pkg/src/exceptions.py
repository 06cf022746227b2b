from typing import Any, Dict, List, Optional


class HRIError(Exception):
    pass


class IdentifierError(HRIError, ValueError):
    pass


class RangeError(HRIError, ValueError):
    pass


class CodecError(HRIError):
    pass


class ParseError(CodecError):
    def __init__(self, message: str, position: int, line: int = 1, column: int = 1):
        super().__init__(f"{message} (line {line}, column {column}, char {position})")
        self.position = position
        self.line = line
        self.column = column


class SchemaError(CodecError):
    def __init__(self, schema: str, missing: List[str], extra: List[str]):
        parts = []
        if missing:
            parts.append(f"missing fields {sorted(missing)}")
        if extra:
            parts.append(f"extra fields {sorted(extra)}")
        super().__init__(f"{schema}: " + ", ".join(parts or ["schema mismatch"]))
        self.schema = schema
        self.missing = sorted(missing)
        self.extra = sorted(extra)


class MessageValidationError(CodecError):
    def __init__(self, schema: str, report: Any):
        super().__init__(f"{schema} failed validation: {report}")
        self.schema = schema
        self.report = report


class NamingError(HRIError):
    def __init__(self, path: str, segment: Optional[str], reason: str):
        super().__init__(f"invalid topic {path!r}: segment {segment!r} {reason}")
        self.path = path
        self.segment = segment
        self.reason = reason


class BindingError(HRIError):
    pass


class LogParseError(HRIError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LogIntegrityError(HRIError):
    def __init__(self, message: str, line: int, event_index: Optional[int] = None):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.event_index = event_index


class TfError(HRIError):
    pass


class TreeError(TfError):
    pass


class ConflictError(TfError):
    pass


class TransformLookupError(TfError, LookupError):
    pass


class ExtrapolationError(TfError):
    pass


class EstimationError(HRIError):
    pass


class TimeRegressionError(HRIError):
    pass


class RecordCreationError(HRIError, ValueError):
    pass


class ScenarioLoadError(HRIError):
    def __init__(self, path: str, message: str, details: Optional[List[Dict[str, Any]]] = None):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.details = details or []

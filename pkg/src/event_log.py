"""The ``.hrilog`` event log: one canonical-JSON object per line.

The first line is a header carrying ``hrilog_version`` plus the run
metadata (seed, effective person_manager config, known persons); every
following line is an event with ``seq``, ``t``, ``topic``, ``schema``,
``latched`` and ``payload``.
"""
import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, TextIO, Tuple, Union

import structlog

from .exceptions import CodecError, LogIntegrityError, LogParseError
from .hri_codec import canonical_dumps, from_payload, loads
from .hri_model import MessageModel

logger = structlog.get_logger()

HRILOG_VERSION = 1
HRILOG_SUFFIX = ".hrilog"
EVENT_FIELDS = ("latched", "payload", "schema", "seq", "t", "topic")


@dataclass(frozen=True)
class LogEvent:
    seq: int
    t: float
    topic: str
    schema: str
    latched: bool
    payload: Dict[str, Any]

    def as_dict(self) -> Dict[str, Any]:
        return {
            "seq": self.seq, "t": self.t, "topic": self.topic, "schema": self.schema,
            "latched": self.latched, "payload": self.payload,
        }

    def to_line(self) -> str:
        return canonical_dumps(self.as_dict())

    def message(self) -> MessageModel:
        return from_payload(self.payload, self.schema)


def make_header(**metadata: Any) -> Dict[str, Any]:
    return {"hrilog_version": HRILOG_VERSION, **metadata}


class EventRecorder:
    """Append-only writer; the header is written when the recorder opens."""

    def __init__(self, sink: Union[str, Path, TextIO, None] = None, header: Optional[Dict[str, Any]] = None):
        self._owns_sink = isinstance(sink, (str, Path))
        if self._owns_sink:
            path = Path(sink)
            path.parent.mkdir(parents=True, exist_ok=True)
            self._sink: TextIO = path.open("w", encoding="utf-8", newline="\n")
        else:
            self._sink = sink if sink is not None else io.StringIO()
        self.header = header if header is not None else make_header()
        self.count = 0
        self._sink.write(canonical_dumps(self.header) + "\n")

    def write(self, event: LogEvent) -> None:
        self._sink.write(event.to_line() + "\n")
        self.count += 1

    def getvalue(self) -> str:
        return self._sink.getvalue()

    def close(self) -> None:
        self._sink.flush()
        if self._owns_sink:
            self._sink.close()
        logger.debug("event_log_closed", events=self.count)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def _lines(source: Union[str, Path, TextIO, Iterable[str]]) -> List[str]:
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and os.path.isfile(source)):
        return Path(source).read_text(encoding="utf-8").splitlines()
    if isinstance(source, str):
        return source.splitlines()
    if hasattr(source, "read"):
        return source.read().splitlines()
    return [line.rstrip("\n") for line in source]


def _parse_event(data: Any, line: int) -> LogEvent:
    if not isinstance(data, dict):
        raise LogParseError("event is not an object", line)
    keys = tuple(sorted(data))
    if keys != EVENT_FIELDS:
        missing = sorted(set(EVENT_FIELDS) - set(keys))
        extra = sorted(set(keys) - set(EVENT_FIELDS))
        raise LogParseError(f"event fields mismatch (missing {missing}, extra {extra})", line)
    seq, t, latched = data["seq"], data["t"], data["latched"]
    if isinstance(seq, bool) or not isinstance(seq, int):
        raise LogParseError("seq must be an integer", line)
    if isinstance(t, bool) or not isinstance(t, (int, float)):
        raise LogParseError("t must be a number", line)
    if not isinstance(latched, bool):
        raise LogParseError("latched must be a boolean", line)
    if not isinstance(data["topic"], str) or not isinstance(data["schema"], str):
        raise LogParseError("topic and schema must be strings", line)
    if not isinstance(data["payload"], dict):
        raise LogParseError("payload must be an object", line)
    return LogEvent(seq, float(t), data["topic"], data["schema"], latched, data["payload"])


def parse_log(source: Union[str, Path, TextIO, Iterable[str]]) -> Tuple[Dict[str, Any], List[Tuple[int, LogEvent]]]:
    """Parse a log into its header and (line number, event) pairs without integrity checks."""
    lines = _lines(source)
    if not lines:
        raise LogParseError("empty log", 1)
    try:
        header = loads(lines[0])
    except CodecError as exc:
        raise LogParseError(f"malformed header: {exc}", 1) from None
    if not isinstance(header, dict) or header.get("hrilog_version") != HRILOG_VERSION:
        raise LogParseError(f"header must declare hrilog_version {HRILOG_VERSION}", 1)
    events = []
    for number, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        try:
            data = loads(text)
        except CodecError as exc:
            raise LogParseError(str(exc), number) from None
        events.append((number, _parse_event(data, number)))
    return header, events


def integrity_issues(events: List[Tuple[int, LogEvent]]) -> List[Dict[str, Any]]:
    issues = []
    previous: Optional[LogEvent] = None
    for index, (line, event) in enumerate(events, start=1):
        if previous is not None:
            if event.seq <= previous.seq:
                issues.append({
                    "type": "sequence_monotonic", "severity": "critical", "line": line, "event_index": index,
                    "message": f"sequence {event.seq} follows {previous.seq}",
                })
            if event.t < previous.t:
                issues.append({
                    "type": "timestamp_monotonic", "severity": "critical", "line": line, "event_index": index,
                    "message": f"timestamp {event.t} follows {previous.t}",
                })
        previous = event
    return issues


def read_log(source: Union[str, Path, TextIO, Iterable[str]]) -> Tuple[Dict[str, Any], List[LogEvent]]:
    header, events = parse_log(source)
    issues = integrity_issues(events)
    if issues:
        raise LogIntegrityError(issues[0]["message"], issues[0]["line"], issues[0]["event_index"])
    return header, [event for _, event in events]

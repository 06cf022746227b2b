"""Protocol conformance checks over a recorded ``.hrilog``."""
from collections import Counter
from typing import Any, Dict, List, Optional, Set

import structlog

from .event_log import LogEvent, integrity_issues, parse_log
from .exceptions import CodecError, NamingError
from .hri_bus import TF_TOPIC, TopicPath, parse_topic, tracked_topic
from .hri_codec import from_payload
from .hri_model import SCHEMAS, IdKind
from .hri_tf import Transform, check_face_frame, parse_frame

logger = structlog.get_logger()

RULES = (
    "topic_grammar",
    "unknown_schema",
    "schema_binding",
    "latched_discipline",
    "payload_invalid",
    "untracked_id",
    "lost_id_publish",
    "person_without_identifier",
    "frame_at_zero_confidence",
    "confidence_without_identifier",
    "missing_person_frame",
    "sequence_monotonic",
    "timestamp_monotonic",
    "face_frame_orientation",
)
ID_LEAVES = ("face_id", "body_id", "voice_id")


class _ProtocolState:
    def __init__(self):
        self.ever_tracked: Dict[IdKind, Set[str]] = {kind: set() for kind in IdKind}
        self.tracked: Dict[IdKind, Set[str]] = {kind: set() for kind in IdKind}
        self.person_ids: Dict[str, Dict[str, str]] = {}
        self.named: Set[str] = set()
        self.confidence: Dict[str, float] = {}
        self.new_persons: Set[str] = set()
        self.framed: Set[str] = set()

    def has_identifier(self, person_id: str) -> bool:
        ids = self.person_ids.get(person_id, {})
        return any(ids.get(leaf) for leaf in ID_LEAVES) or person_id in self.named


class ConformanceChecker:
    def __init__(self, rules: Optional[List[str]] = None):
        self.rules = tuple(rules) if rules else RULES
        logger.debug("conformance_checker_initialized", rules=len(self.rules))

    def check(self, source: Any) -> Dict[str, Any]:
        """Validate a log; raises LogParseError only when the file cannot be read as a log."""
        _, numbered = parse_log(source)
        violations: List[Dict[str, Any]] = [
            issue for issue in integrity_issues(numbered) if issue["type"] in self.rules
        ]
        state = _ProtocolState()
        current_t: Optional[float] = None
        for index, (line, event) in enumerate(numbered, start=1):
            if current_t is not None and event.t != current_t:
                violations.extend(self._close_timestamp(state, current_t, line))
            current_t = event.t
            violations.extend(self._check_event(state, event, line, index))
        if current_t is not None:
            violations.extend(self._close_timestamp(state, current_t, None))
        violations = [v for v in violations if v["type"] in self.rules]

        summary = Counter(v["type"] for v in violations)
        results = {
            "events": len(numbered),
            "checks_performed": list(self.rules),
            "violations": violations,
            "status": "pass" if not violations else "fail",
            "summary": {rule: summary.get(rule, 0) for rule in self.rules},
        }
        logger.info("conformance_checked", events=len(numbered), status=results["status"],
                    violations=len(violations))
        return results

    @staticmethod
    def _violation(rule: str, message: str, line: Optional[int], index: Optional[int] = None,
                   **details) -> Dict[str, Any]:
        issue = {"type": rule, "severity": "critical", "message": message, "line": line}
        if index is not None:
            issue["event_index"] = index
        issue.update(details)
        return issue

    def _check_event(self, state: _ProtocolState, event: LogEvent, line: int, index: int) -> List[Dict[str, Any]]:
        issues = []
        try:
            topic = parse_topic(event.topic)
        except NamingError as exc:
            return [self._violation("topic_grammar", str(exc), line, index, topic=event.topic)]
        if event.schema not in SCHEMAS:
            return [self._violation("unknown_schema", f"unknown schema {event.schema}", line, index,
                                    topic=event.topic)]
        expected_schema, expected_latched = topic.binding()
        if event.schema != expected_schema:
            issues.append(self._violation(
                "schema_binding", f"{event.topic} carries {expected_schema}, not {event.schema}", line, index,
                topic=event.topic,
            ))
        if event.latched != expected_latched:
            issues.append(self._violation(
                "latched_discipline",
                f"{event.topic} must be {'latched' if expected_latched else 'not latched'}", line, index,
                topic=event.topic,
            ))
        try:
            message = from_payload(event.payload, event.schema)
        except CodecError as exc:
            issues.append(self._violation("payload_invalid", str(exc), line, index, topic=event.topic))
            return issues
        if issues:
            return issues
        if event.topic == TF_TOPIC:
            return self._check_transform(state, message, line, index)
        if topic.is_tracked_list:
            self._apply_tracked(state, topic, message.ids)
            return issues
        if topic.entity_id is not None:
            issues.extend(self._check_entity(state, topic, message, line, index))
        return issues

    def _apply_tracked(self, state: _ProtocolState, topic: TopicPath, ids: List[str]) -> None:
        kind = topic.kind
        if kind == IdKind.PERSON:
            state.new_persons |= set(ids) - state.ever_tracked[kind]
        state.tracked[kind] = set(ids)
        state.ever_tracked[kind] |= set(ids)

    def _check_entity(self, state: _ProtocolState, topic: TopicPath, message, line: int,
                      index: int) -> List[Dict[str, Any]]:
        kind, entity = topic.kind, topic.entity_id
        if entity not in state.ever_tracked[kind]:
            return [self._violation(
                "untracked_id", f"{entity} published before appearing in {tracked_topic(kind)}", line, index,
                topic=topic.path,
            )]
        if entity not in state.tracked[kind]:
            return [self._violation(
                "lost_id_publish", f"{entity} published after leaving {tracked_topic(kind)}", line, index,
                topic=topic.path,
            )]
        if kind != IdKind.PERSON:
            return []
        if topic.leaf in ID_LEAVES:
            state.person_ids.setdefault(entity, {})[topic.leaf] = message.data
        elif topic.leaf == "name" and message.data:
            state.named.add(entity)
        elif topic.leaf == "location_confidence":
            state.confidence[entity] = message.data
            ids = state.person_ids.get(entity, {})
            if message.data == 1.0 and not any(ids.get(leaf) for leaf in ID_LEAVES):
                return [self._violation(
                    "confidence_without_identifier",
                    f"person {entity} reports confidence 1 without any live identifier", line, index,
                    topic=topic.path,
                )]
        return []

    def _check_transform(self, state: _ProtocolState, message, line: int, index: int) -> List[Dict[str, Any]]:
        issues = []
        parsed = parse_frame(message.child)
        if parsed is None:
            return issues
        prefix, identifier = parsed
        if prefix == "person":
            state.framed.add(identifier)
            if state.confidence.get(identifier) == 0.0:
                issues.append(self._violation(
                    "frame_at_zero_confidence", f"frame published at zero confidence for person {identifier}",
                    line, index, frame=message.child,
                ))
        elif prefix == "face":
            for problem in check_face_frame(Transform.from_msg(message)):
                issues.append(self._violation(
                    "face_frame_orientation", f"{message.child}: {problem['message']}", line, index,
                    frame=message.child, check=problem["type"],
                ))
        return issues

    def _close_timestamp(self, state: _ProtocolState, t: float, next_line: Optional[int]) -> List[Dict[str, Any]]:
        issues = []
        for person_id in sorted(state.new_persons):
            if not state.has_identifier(person_id):
                issues.append(self._violation(
                    "person_without_identifier", f"person {person_id} appeared at t={t} without any identifier",
                    next_line, person_id=person_id,
                ))
        for person_id, confidence in sorted(state.confidence.items()):
            if confidence > 0.0 and person_id not in state.framed:
                issues.append(self._violation(
                    "missing_person_frame", f"person {person_id} has confidence {confidence} but no frame at t={t}",
                    next_line, person_id=person_id,
                ))
        state.new_persons = set()
        state.framed = set()
        return issues


def validate_log(source: Any, rules: Optional[List[str]] = None) -> Dict[str, Any]:
    return ConformanceChecker(rules).check(source)

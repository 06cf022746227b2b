"""In-process publish/subscribe bus for the ``/humans`` topic protocol.

Delivery is pull-based: each subscription owns a FIFO queue filled under
the bus lock, so no subscriber code runs inside ``publish``.
"""
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, Iterable, List, NamedTuple, Optional, Tuple, Union

import structlog

from .config_manager import BusConfig
from .event_log import EventRecorder, LogEvent, read_log
from .exceptions import BindingError, IdentifierError, MessageValidationError, NamingError, TimeRegressionError
from .hri_model import (
    ID_PATTERN,
    IdKind,
    IdRegistry,
    Identifier,
    IdsList,
    MessageModel,
    TransformStamped,
    schema_name,
    validate,
)
from .hri_tf import Transform, TransformBuffer

logger = structlog.get_logger()

ROOT = "humans"
TF_TOPIC = "/tf"
WILDCARD = "*"
KIND_NAMESPACES = {kind.plural: kind for kind in IdKind}
TRACKED_LEAF = "tracked"
TRACKED_SCHEMA = "IdsList"

# leaf -> (schema, latched)
LEAVES: Dict[str, Dict[str, Tuple[str, bool]]] = {
    "faces": {
        "roi": ("RegionOfInterest", False),
        "landmarks": ("FacialLandmarks", False),
        "facs": ("FacialActionUnits", False),
        "expression": ("Expression", False),
        "descriptor": ("IdentityDescriptor", False),
        "demographics": ("AgeAndGender", False),
    },
    "bodies": {
        "roi": ("RegionOfInterest", False),
        "skeleton2d": ("Skeleton2D", False),
        "attitude": ("BodyAttitude", False),
        "urdf": ("String", True),
    },
    "voices": {
        "audio": ("AudioData", False),
        "features": ("AudioFeatures", False),
        "is_speaking": ("Bool", False),
        "speech": ("String", False),
    },
    "persons": {
        "face_id": ("String", True),
        "body_id": ("String", True),
        "voice_id": ("String", True),
        "location_confidence": ("Float32", False),
        "demographics": ("AgeAndGender", False),
        "name": ("String", False),
        "native_language": ("String", False),
    },
}
INTERACTIONS = {"groups": ("GroupsStamped", False), "gaze": ("GazesStamped", False)}


@dataclass(frozen=True)
class TopicPath:
    path: str
    namespace: str
    entity_id: Optional[str] = None
    leaf: Optional[str] = None

    @property
    def segments(self) -> List[str]:
        return self.path.strip("/").split("/")

    @property
    def is_pattern(self) -> bool:
        return self.entity_id == WILDCARD

    @property
    def kind(self) -> Optional[IdKind]:
        return KIND_NAMESPACES.get(self.namespace)

    @property
    def is_tracked_list(self) -> bool:
        return self.entity_id is None and self.leaf == TRACKED_LEAF

    def binding(self) -> Tuple[str, bool]:
        if self.namespace == "tf":
            return "TransformStamped", False
        if self.namespace == "interactions":
            return INTERACTIONS[self.leaf]
        if self.is_tracked_list:
            return TRACKED_SCHEMA, True
        return LEAVES[self.namespace][self.leaf]

    def matches(self, other: "TopicPath") -> bool:
        if not self.is_pattern:
            return self.path == other.path
        return (other.namespace == self.namespace and other.leaf == self.leaf
                and other.entity_id is not None and other.entity_id != WILDCARD)

    def __str__(self) -> str:
        return self.path


def parse_topic(path: str, allow_wildcard: bool = False) -> TopicPath:
    if path == TF_TOPIC:
        return TopicPath(path, "tf", None, None)
    if not path.startswith("/"):
        raise NamingError(path, path, "is not absolute (must start with '/')")
    segments = path[1:].split("/")
    for segment in segments:
        if not segment:
            raise NamingError(path, segment, "is empty")
    if segments[0] != ROOT:
        raise NamingError(path, segments[0], f"is outside the /{ROOT} namespace")
    if len(segments) < 3:
        raise NamingError(path, segments[-1], "ends the path too early")
    namespace = segments[1]
    if namespace == "interactions":
        if len(segments) != 3:
            raise NamingError(path, segments[3], "is not allowed under /humans/interactions")
        if segments[2] not in INTERACTIONS:
            raise NamingError(path, segments[2], "is not an interaction topic")
        return TopicPath(path, namespace, None, segments[2])
    if namespace not in LEAVES:
        raise NamingError(path, namespace, "is not one of faces, bodies, voices, persons, interactions")
    if len(segments) == 3:
        if segments[2] != TRACKED_LEAF:
            raise NamingError(path, segments[2], "must be 'tracked' or be followed by a leaf")
        return TopicPath(path, namespace, None, TRACKED_LEAF)
    if len(segments) != 4:
        raise NamingError(path, segments[4], "is beyond the leaf")
    entity_id, leaf = segments[2], segments[3]
    if entity_id == WILDCARD:
        if not allow_wildcard:
            raise NamingError(path, entity_id, "wildcards are only valid in subscriptions")
    elif not ID_PATTERN.match(entity_id):
        raise NamingError(path, entity_id, "is not an 8-character lowercase hex identifier")
    if leaf not in LEAVES[namespace]:
        raise NamingError(path, leaf, f"is not a leaf of /{ROOT}/{namespace}")
    return TopicPath(path, namespace, entity_id, leaf)


def entity_topic(kind: Union[IdKind, str], entity_id: str, leaf: str) -> str:
    return f"/{ROOT}/{IdKind(kind).plural}/{entity_id}/{leaf}"


def tracked_topic(kind: Union[IdKind, str]) -> str:
    return f"/{ROOT}/{IdKind(kind).plural}/{TRACKED_LEAF}"


def interaction_topic(name: str) -> str:
    return f"/{ROOT}/interactions/{name}"


@dataclass(frozen=True)
class TopicHandle:
    path: str
    schema: str
    latched: bool


class Delivery(NamedTuple):
    path: str
    timestamp: float
    message: MessageModel


@dataclass
class TopicRecord:
    topic: TopicPath
    schema: str
    latched: bool
    last_value: Optional[Delivery] = None
    publish_count: int = 0


class Subscription:
    def __init__(self, pattern: TopicPath):
        self.pattern = pattern
        self._queue: Deque[Delivery] = deque()
        self._lock = threading.Lock()

    def _push(self, delivery: Delivery) -> None:
        with self._lock:
            self._queue.append(delivery)

    def get(self) -> Optional[Delivery]:
        with self._lock:
            return self._queue.popleft() if self._queue else None

    def drain(self) -> List[Delivery]:
        with self._lock:
            items = list(self._queue)
            self._queue.clear()
        return items

    def __len__(self) -> int:
        return len(self._queue)


class HRIBus:
    def __init__(self, config: Optional[BusConfig] = None, registry: Optional[IdRegistry] = None):
        self.config = config or BusConfig()
        self.ids = registry if registry is not None else IdRegistry()
        self.tf = TransformBuffer(self.config.tf_retention_seconds)
        self._topics: Dict[str, TopicRecord] = {}
        self._subscriptions: List[Subscription] = []
        self._recorders: List[EventRecorder] = []
        self._tracked: Dict[IdKind, Tuple[str, ...]] = {kind: () for kind in IdKind}
        self._sequence = 0
        self._clock = 0.0
        self._lock = threading.RLock()

    @property
    def now(self) -> float:
        return self._clock

    @property
    def sequence(self) -> int:
        return self._sequence

    def advertise(self, path: str, schema: Union[str, type], latched: bool) -> TopicHandle:
        topic = parse_topic(path)
        schema = schema if isinstance(schema, str) else schema.__name__
        expected_schema, expected_latched = topic.binding()
        if schema != expected_schema:
            raise BindingError(f"{path} carries {expected_schema}, not {schema}")
        if latched != expected_latched:
            raise BindingError(f"{path} must be {'latched' if expected_latched else 'not latched'}")
        with self._lock:
            record = self._topics.get(path)
            if record is None:
                self._topics[path] = TopicRecord(topic, schema, latched)
                if topic.entity_id is not None:
                    self.ids.register(topic.entity_id)
                logger.debug("topic_advertised", topic=path, schema=schema, latched=latched)
        return TopicHandle(path, schema, latched)

    def advertise_bound(self, path: str) -> TopicHandle:
        schema, latched = parse_topic(path).binding()
        return self.advertise(path, schema, latched)

    def topics(self) -> List[str]:
        with self._lock:
            return sorted(self._topics)

    def last_value(self, path: str) -> Optional[Delivery]:
        with self._lock:
            record = self._topics.get(path)
            return record.last_value if record else None

    def publish(self, handle: Union[TopicHandle, str], message: MessageModel, timestamp: float) -> int:
        if isinstance(handle, str):
            handle = self.advertise_bound(handle)
        name = schema_name(message)
        if name != handle.schema:
            raise BindingError(f"{handle.path} carries {handle.schema}, not {name}")
        report = validate(message)
        if not report.ok:
            raise MessageValidationError(name, report)
        with self._lock:
            record = self._topics.get(handle.path)
            if record is None:
                raise BindingError(f"{handle.path} is not advertised")
            if timestamp < self._clock:
                raise TimeRegressionError(f"publish at t={timestamp} after t={self._clock}")
            if handle.path == TF_TOPIC:
                self.tf.set(message.parent, message.child, Transform.from_msg(message), message.timestamp)
            self._clock = timestamp
            self._sequence += 1
            delivery = Delivery(handle.path, timestamp, message)
            record.publish_count += 1
            if record.latched:
                record.last_value = delivery
            count = 0
            for subscription in self._subscriptions:
                if subscription.pattern.matches(record.topic):
                    subscription._push(delivery)
                    count += 1
            if self._recorders:
                event = LogEvent(
                    seq=self._sequence, t=timestamp, topic=handle.path, schema=name,
                    latched=record.latched, payload=message.model_dump(mode="json"),
                )
                for recorder in self._recorders:
                    recorder.write(event)
        return count

    def publish_transform(self, parent: str, child: str, transform: Transform, timestamp: float) -> int:
        return self.publish(TF_TOPIC, transform.to_msg(parent, child, timestamp), timestamp)

    def subscribe(self, pattern: str) -> Subscription:
        topic = parse_topic(pattern, allow_wildcard=True)
        subscription = Subscription(topic)
        with self._lock:
            for record in self._topics.values():
                if record.latched and record.last_value is not None and topic.matches(record.topic):
                    subscription._push(record.last_value)
            self._subscriptions.append(subscription)
        return subscription

    def unsubscribe(self, subscription: Subscription) -> None:
        with self._lock:
            if subscription in self._subscriptions:
                self._subscriptions.remove(subscription)

    def tracked(self, kind: Union[IdKind, str]) -> Tuple[str, ...]:
        return self._tracked[IdKind(kind)]

    def update_tracked(self, kind: Union[IdKind, str], live_ids: Iterable[Union[Identifier, str]],
                       timestamp: float) -> Optional[IdsList]:
        kind = IdKind(kind)
        values = []
        for live in live_ids:
            if isinstance(live, Identifier):
                if live.kind != kind:
                    raise IdentifierError(f"{live.value} is a {live.kind.value} id, not {kind.value}")
                live = live.value
            values.append(live)
        current = tuple(sorted(set(values)))
        with self._lock:
            if current == self._tracked[kind]:
                return None
            for value in current:
                self.ids.register(value)
            message = IdsList(ids=list(current))
            self.publish(tracked_topic(kind), message, timestamp)
            self._tracked[kind] = current
        return message

    def record(self, sink: Union[EventRecorder, Any] = None, header: Optional[Dict[str, Any]] = None) -> EventRecorder:
        recorder = sink if isinstance(sink, EventRecorder) else EventRecorder(sink, header)
        with self._lock:
            self._recorders.append(recorder)
        return recorder

    def stop_recording(self, recorder: EventRecorder) -> None:
        with self._lock:
            if recorder in self._recorders:
                self._recorders.remove(recorder)


def replay(source: Any, bus: HRIBus, keep: Optional[Callable[[LogEvent], bool]] = None,
           on_tick: Optional[Callable[[float], None]] = None) -> int:
    """Re-publish logged events in order; returns the number re-published.

    ``on_tick(t)`` runs after the last event of each timestamp.
    """
    header, events = read_log(source)
    if bus.sequence:
        raise BindingError(f"replay needs a fresh bus, target already carries {bus.sequence} event(s)")
    retention = header.get("bus", {}).get("tf_retention_seconds")
    if retention is not None and retention != bus.config.tf_retention_seconds:
        raise BindingError(
            f"log was recorded with tf retention {retention} s, target bus keeps {bus.config.tf_retention_seconds} s"
        )
    count = 0
    current: Optional[float] = None
    for event in events:
        if on_tick is not None and current is not None and event.t != current:
            on_tick(current)
        current = event.t
        if keep is not None and not keep(event):
            continue
        handle = bus.advertise(event.topic, event.schema, event.latched)
        if handle.path != TF_TOPIC and parse_topic(handle.path).is_tracked_list:
            kind = parse_topic(handle.path).kind
            bus.update_tracked(kind, event.message().ids, event.t)
        else:
            bus.publish(handle, event.message(), event.t)
        count += 1
    if on_tick is not None and current is not None:
        on_tick(current)
    logger.info("log_replayed", events=count)
    return count

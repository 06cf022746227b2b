"""Fusion of transient face/body/voice ids into persistent persons.

The manager pulls everything it needs from the bus, so the same code runs
live behind the simulator and during log replay.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
import structlog

from .config_manager import BusConfig, PersonManagerConfig
from .event_log import EventRecorder, LogEvent, read_log
from .exceptions import (
    ExtrapolationError,
    RecordCreationError,
    TimeRegressionError,
    TransformLookupError,
)
from .hri_bus import TF_TOPIC, HRIBus, entity_topic, interaction_topic, parse_topic, replay, tracked_topic
from .hri_model import (
    BLINK_ACTION_UNIT,
    AgeAndGender,
    BodyAttitude,
    FacialActionUnits,
    Float32,
    GazesStamped,
    GroupsStamped,
    IdKind,
    RegionOfInterest,
    String,
    canonical_float,
    new_person_id,
)
from .hri_tf import FACE_TO_GAZE, Transform, frame_name
from .interactions import GroupIdAllocator, detect_gaze, detect_groups
from .perception import (
    CameraIntrinsics,
    classify_body_attitude,
    containment_ratio,
    face_position_from_roi,
    roi_upper_third,
)

logger = structlog.get_logger()

UNMATCHED_COST = 1e6
TIE_TOLERANCE = 1e-9


class Evidence(str, Enum):
    SPATIAL_OVERLAP = "spatial_overlap"
    FRAME_DISTANCE = "frame_distance"
    DESCRIPTOR_MATCH = "descriptor_match"


@dataclass(frozen=True)
class AssociationCandidate:
    kinds: Tuple[str, str]
    first: str
    second: str
    cost: float
    evidence: Evidence


@dataclass
class FaceObservation:
    face_id: str
    roi: Optional[RegionOfInterest] = None
    position: Optional[np.ndarray] = None


@dataclass
class BodyObservation:
    body_id: str
    roi: Optional[RegionOfInterest] = None
    head_position: Optional[np.ndarray] = None


@dataclass(frozen=True)
class KnownPerson:
    name: str
    descriptor: Optional[Tuple[float, ...]] = None
    native_language: Optional[str] = None

    @classmethod
    def from_dict(cls, data: Mapping) -> "KnownPerson":
        descriptor = data.get("descriptor")
        return cls(
            name=data["name"],
            descriptor=tuple(descriptor) if descriptor is not None else None,
            native_language=data.get("native_language"),
        )

    def as_dict(self) -> Dict:
        return {
            "name": self.name,
            "descriptor": list(self.descriptor) if self.descriptor is not None else None,
            "native_language": self.native_language,
        }


@dataclass
class PersonRecord:
    person_id: str
    face_id: Optional[str] = None
    body_id: Optional[str] = None
    voice_id: Optional[str] = None
    descriptor: Optional[np.ndarray] = None
    name: Optional[str] = None
    native_language: Optional[str] = None
    location_confidence: float = 0.0
    last_seen: Optional[float] = None
    lost_at: Optional[float] = None
    last_known_frame: Optional[Transform] = None
    frame_source: Optional[str] = None
    demographics: Optional[AgeAndGender] = None
    descriptor_count: int = 0

    def __post_init__(self):
        if not any((self.face_id, self.body_id, self.voice_id, self.name, self.descriptor is not None)):
            raise RecordCreationError("at least one identifier must exist")
        if self.descriptor is not None:
            self.descriptor = np.asarray(self.descriptor, dtype=float)
            self.descriptor_count = max(self.descriptor_count, 1)

    @property
    def tracked(self) -> bool:
        return any((self.face_id, self.body_id, self.voice_id))

    @property
    def anonymous(self) -> bool:
        return self.descriptor is None and self.name is None

    def observe_descriptor(self, descriptor: np.ndarray) -> None:
        descriptor = np.asarray(descriptor, dtype=float)
        if self.descriptor is None:
            self.descriptor, self.descriptor_count = descriptor.copy(), 1
            return
        self.descriptor_count += 1
        self.descriptor = self.descriptor + (descriptor - self.descriptor) / self.descriptor_count


def face_body_cost(face: FaceObservation, body: BodyObservation,
                   config: PersonManagerConfig) -> Optional[Tuple[float, Evidence]]:
    distance_cost = None
    if face.position is not None and body.head_position is not None:
        distance = float(np.linalg.norm(np.asarray(face.position) - np.asarray(body.head_position)))
        distance_cost = distance / config.face_body_distance_scale
    if face.roi is not None and body.roi is not None:
        if distance_cost is not None and distance_cost > config.association_gate:
            return None
        return 1.0 - containment_ratio(face.roi, roi_upper_third(body.roi)), Evidence.SPATIAL_OVERLAP
    if distance_cost is not None:
        return distance_cost, Evidence.FRAME_DISTANCE
    return None


def bearing_difference(a: float, b: float) -> float:
    return abs(math.atan2(math.sin(a - b), math.cos(a - b)))


def voice_person_cost(voice_bearing: float, person_bearing: float, config: PersonManagerConfig) -> float:
    return bearing_difference(voice_bearing, person_bearing) / math.radians(config.voice_bearing_scale_deg)


def _solve(cost: np.ndarray) -> Tuple[int, float, List[Tuple[int, int]]]:
    rows, cols = linear_sum_assignment(cost)
    pairs = list(zip(rows.tolist(), cols.tolist()))
    unmatched = sum(1 for r, c in pairs if cost[r, c] >= UNMATCHED_COST)
    total = float(sum(cost[r, c] for r, c in pairs if cost[r, c] < UNMATCHED_COST))
    return unmatched, total, pairs


def solve_assignment(cost: np.ndarray, gate: float) -> List[Tuple[int, int]]:
    """Minimum-cost one-to-one matching; entries above ``gate`` never match.

    Rows and columns must already be in lexicographic id order: among optimal
    assignments the lexicographically smallest one is returned.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return []
    work = np.where(np.isfinite(cost) & (cost <= gate), cost, UNMATCHED_COST)
    best_unmatched, best_total, _ = _solve(work)
    for row in range(work.shape[0]):
        for col in range(work.shape[1]):
            if work[row, col] >= UNMATCHED_COST:
                continue
            trial = work.copy()
            trial[row, :] = UNMATCHED_COST
            trial[:, col] = UNMATCHED_COST
            trial[row, col] = work[row, col]
            unmatched, total, _ = _solve(trial)
            if unmatched == best_unmatched and abs(total - best_total) <= TIE_TOLERANCE:
                work = trial
                break
    _, _, pairs = _solve(work)
    return sorted((r, c) for r, c in pairs if work[r, c] < UNMATCHED_COST)


def associate(faces: Sequence[FaceObservation], bodies: Sequence[BodyObservation],
              voices: Mapping[str, float], person_bearings: Mapping[str, float],
              config: PersonManagerConfig) -> List[AssociationCandidate]:
    """Optimal face/body and voice/person matching for one instant."""
    result: List[AssociationCandidate] = []
    faces = sorted(faces, key=lambda f: f.face_id)
    bodies = sorted(bodies, key=lambda b: b.body_id)
    if faces and bodies:
        cost = np.full((len(faces), len(bodies)), np.inf)
        evidence: Dict[Tuple[int, int], Evidence] = {}
        for i, face in enumerate(faces):
            for j, body in enumerate(bodies):
                scored = face_body_cost(face, body, config)
                if scored is not None:
                    cost[i, j], evidence[(i, j)] = scored
        for i, j in solve_assignment(cost, config.association_gate):
            result.append(AssociationCandidate(
                ("face", "body"), faces[i].face_id, bodies[j].body_id, float(cost[i, j]), evidence[(i, j)]
            ))
    voice_ids, person_ids = sorted(voices), sorted(person_bearings)
    if voice_ids and person_ids:
        cost = np.array([
            [voice_person_cost(voices[v], person_bearings[p], config) for p in person_ids] for v in voice_ids
        ])
        for i, j in solve_assignment(cost, config.association_gate):
            result.append(AssociationCandidate(
                ("voice", "person"), voice_ids[i], person_ids[j], float(cost[i, j]), Evidence.FRAME_DISTANCE
            ))
    return result


def identify(descriptor: Sequence[float], gallery: Iterable[PersonRecord], threshold: float,
             update: bool = True) -> Optional[str]:
    """Nearest gallery person by Euclidean descriptor distance, if closer than ``threshold``."""
    query = np.asarray(descriptor, dtype=float)
    best: Optional[Tuple[float, str, PersonRecord]] = None
    for record in gallery:
        if record.descriptor is None:
            continue
        distance = float(np.linalg.norm(record.descriptor - query))
        if best is None or (distance, record.person_id) < best[:2]:
            best = (distance, record.person_id, record)
    if best is None or best[0] >= threshold:
        return None
    if update:
        best[2].observe_descriptor(query)
    return best[1]


class PersonManager:
    def __init__(self, bus: HRIBus, config: Optional[PersonManagerConfig] = None, seed: int = 0,
                 known_persons: Sequence[KnownPerson] = ()):
        self.bus = bus
        self.config = config or PersonManagerConfig()
        self.intrinsics = CameraIntrinsics.from_config(self.config)
        self.world = self.config.world_frame
        self.sensor = self.config.sensor_frame
        self._rng = np.random.default_rng([seed, 1])
        self._groups = GroupIdAllocator(self._rng, bus.ids)
        self.records: Dict[str, PersonRecord] = {}
        self._owner: Dict[str, str] = {}
        self._live: Dict[IdKind, Set[str]] = {kind: set() for kind in (IdKind.FACE, IdKind.BODY, IdKind.VOICE)}
        self._first_seen: Dict[str, float] = {}
        self._face_roi: Dict[str, RegionOfInterest] = {}
        self._descriptors: Dict[str, np.ndarray] = {}
        self._au45: Dict[str, float] = {}
        self._face_demographics: Dict[str, AgeAndGender] = {}
        self._body_roi: Dict[str, RegionOfInterest] = {}
        self._skeletons: Dict[str, object] = {}
        self._attitudes: Dict[str, BodyAttitude] = {}
        self._frames: Dict[str, Tuple[str, Transform]] = {}
        self._published: Dict[Tuple[str, str], object] = {}
        self._retired: List[PersonRecord] = []
        self._last_gazes: Tuple = ()
        self._last_groups: Tuple = ()
        self._last_tick: Optional[float] = None
        self._low_quality_logged: Set[str] = set()
        self._subscriptions = {
            "tracked": [bus.subscribe(tracked_topic(kind)) for kind in self._live],
            "face_roi": bus.subscribe("/humans/faces/*/roi"),
            "descriptor": bus.subscribe("/humans/faces/*/descriptor"),
            "facs": bus.subscribe("/humans/faces/*/facs"),
            "demographics": bus.subscribe("/humans/faces/*/demographics"),
            "body_roi": bus.subscribe("/humans/bodies/*/roi"),
            "skeleton": bus.subscribe("/humans/bodies/*/skeleton2d"),
        }
        for known in sorted(known_persons, key=lambda k: k.name):
            record = PersonRecord(
                person_id=new_person_id(self._rng, bus.ids).value, name=known.name,
                native_language=known.native_language,
                descriptor=np.asarray(known.descriptor) if known.descriptor is not None else None,
            )
            self.records[record.person_id] = record
            logger.info("known_person_loaded", person_id=record.person_id, name=known.name)

    def person_of(self, entity_id: str) -> Optional[str]:
        return self._owner.get(entity_id)

    def person_by_name(self, name: str) -> Optional[PersonRecord]:
        for record in self.records.values():
            if record.name == name:
                return record
        return None

    # -- input ---------------------------------------------------------------

    def _ingest(self) -> None:
        for subscription in self._subscriptions["tracked"]:
            for delivery in subscription.drain():
                kind = parse_topic(delivery.path).kind
                self._live[kind] = set(delivery.message.ids)
        for name, store in (("face_roi", self._face_roi), ("body_roi", self._body_roi),
                            ("demographics", self._face_demographics)):
            for delivery in self._subscriptions[name].drain():
                store[parse_topic(delivery.path).entity_id] = delivery.message
        for delivery in self._subscriptions["descriptor"].drain():
            self._descriptors[parse_topic(delivery.path).entity_id] = np.asarray(delivery.message.values)
        for delivery in self._subscriptions["facs"].drain():
            message: FacialActionUnits = delivery.message
            self._au45[parse_topic(delivery.path).entity_id] = message.intensity(BLINK_ACTION_UNIT)
        self._skeletons = {}
        for delivery in self._subscriptions["skeleton"].drain():
            self._skeletons[parse_topic(delivery.path).entity_id] = delivery.message

    def on_detection(self, kind: IdKind, entity_id: str, timestamp: float,
                     roi: Optional[RegionOfInterest] = None,
                     descriptor: Optional[Sequence[float]] = None) -> List[PersonRecord]:
        """Inject one detection directly, then run a full tick."""
        kind = IdKind(kind)
        self._live[kind].add(entity_id)
        self.bus.ids.register(entity_id)
        if roi is not None:
            (self._face_roi if kind == IdKind.FACE else self._body_roi)[entity_id] = roi
        if descriptor is not None:
            self._descriptors[entity_id] = np.asarray(descriptor, dtype=float)
        self.tick(timestamp)
        owner = self._owner.get(entity_id)
        return [self.records[owner]] if owner else []

    def on_loss(self, kind: IdKind, entity_id: str, timestamp: float) -> None:
        self._live[IdKind(kind)].discard(entity_id)
        self.tick(timestamp)

    # -- helpers -------------------------------------------------------------

    def _lookup(self, target: str, source: str, now: float) -> Optional[Transform]:
        try:
            return self.bus.tf.lookup(target, source, now)
        except (TransformLookupError, ExtrapolationError):
            return None

    def _has_frame(self, frame: str, now: float) -> bool:
        return frame in self.bus.tf and self.bus.tf.can_transform(self.world, frame, now)

    def _create(self, now: float, source: str, **fields) -> PersonRecord:
        record = PersonRecord(person_id=new_person_id(self._rng, self.bus.ids).value, **fields)
        self.records[record.person_id] = record
        for entity in (record.face_id, record.body_id, record.voice_id):
            if entity:
                self._owner[entity] = record.person_id
        logger.info("person_created", person_id=record.person_id, source=source,
                    face_id=record.face_id, body_id=record.body_id, voice_id=record.voice_id, t=now)
        return record

    def _attach(self, record: PersonRecord, kind: IdKind, entity_id: str) -> None:
        setattr(record, f"{kind.value}_id", entity_id)
        self._owner[entity_id] = record.person_id
        if kind == IdKind.FACE and entity_id in self._descriptors and record.descriptor is None:
            record.observe_descriptor(self._descriptors[entity_id])
        logger.debug("id_attached", person_id=record.person_id, kind=kind.value, entity_id=entity_id)

    def _face_gallery(self, allowed_body: Optional[str] = None) -> List[PersonRecord]:
        return [
            record for _, record in sorted(self.records.items())
            if record.face_id is None and (record.body_id is None or record.body_id == allowed_body)
        ]

    def _identify_face(self, face_id: str, allowed_body: Optional[str] = None) -> Optional[str]:
        descriptor = self._descriptors.get(face_id)
        if descriptor is None:
            return None
        person_id = identify(descriptor, self._face_gallery(allowed_body), self.config.identity_threshold)
        if person_id is not None:
            logger.info("face_identified", face_id=face_id, person_id=person_id)
        return person_id

    def _face_position(self, face_id: str, now: float) -> Optional[np.ndarray]:
        pose = self._lookup(self.sensor, frame_name("face", face_id), now)
        if pose is not None:
            return np.asarray(pose.translation)
        roi = self._face_roi.get(face_id)
        if roi is not None:
            return face_position_from_roi(roi, self.intrinsics, self.config.head_width)
        return None

    def _head_position(self, body_id: str, now: float) -> Optional[np.ndarray]:
        pose = self._lookup(self.sensor, frame_name("head", body_id), now)
        return np.asarray(pose.translation) if pose is not None else None

    # -- association ---------------------------------------------------------

    def _forget(self, entity_id: str) -> None:
        for store in (self._first_seen, self._face_roi, self._descriptors, self._au45,
                      self._face_demographics, self._body_roi, self._attitudes):
            store.pop(entity_id, None)

    def _refresh_live(self, now: float) -> None:
        live_ids = set().union(*self._live.values())
        for entity_id in sorted(set(self._first_seen) - live_ids):
            self._forget(entity_id)
        for kind, live in self._live.items():
            for entity_id in sorted(live):
                self._first_seen.setdefault(entity_id, now)
            lost = [entity for entity, pid in self._owner.items()
                    if getattr(self.records[pid], f"{kind.value}_id") == entity and entity not in live]
            for entity_id in sorted(lost):
                record = self.records[self._owner.pop(entity_id)]
                setattr(record, f"{kind.value}_id", None)
                logger.info("id_lost", person_id=record.person_id, kind=kind.value, entity_id=entity_id, t=now)

    def _confirmed(self, kind: IdKind, now: float) -> List[str]:
        return sorted(
            entity for entity in self._live[kind]
            if now - self._first_seen.get(entity, now) >= self.config.min_track_age - 1e-9
        )

    def _associate_faces_bodies(self, now: float) -> None:
        faces = self._confirmed(IdKind.FACE, now)
        bodies = self._confirmed(IdKind.BODY, now)
        rows = [f for f in faces if f not in self._owner or self.records[self._owner[f]].body_id is None]
        cols = [b for b in bodies if b not in self._owner or self.records[self._owner[b]].face_id is None]
        candidates = associate(
            [FaceObservation(f, self._face_roi.get(f), self._face_position(f, now)) for f in rows],
            [BodyObservation(b, self._body_roi.get(b), self._head_position(b, now)) for b in cols],
            {}, {}, self.config,
        )
        for candidate in candidates:
            self._apply_face_body(candidate.first, candidate.second, now)
        for face_id in faces:
            if face_id in self._owner:
                continue
            person_id = self._identify_face(face_id)
            if person_id is not None:
                self._attach(self.records[person_id], IdKind.FACE, face_id)
            else:
                self._create(now, "face", face_id=face_id, descriptor=self._descriptors.get(face_id))
        for body_id in bodies:
            if body_id not in self._owner:
                self._create(now, "body", body_id=body_id)

    def _apply_face_body(self, face_id: str, body_id: str, now: float) -> None:
        face_owner, body_owner = self._owner.get(face_id), self._owner.get(body_id)
        if face_owner is not None and body_owner is not None:
            self._join(self.records[face_owner], self.records[body_owner], now)
            return
        if face_owner is not None:
            self._attach(self.records[face_owner], IdKind.BODY, body_id)
            return
        target = self._identify_face(face_id, allowed_body=body_id)
        if body_owner is None:
            if target is not None:
                record = self.records[target]
                self._attach(record, IdKind.FACE, face_id)
                self._attach(record, IdKind.BODY, body_id)
            else:
                self._create(now, "face_body", face_id=face_id, body_id=body_id,
                             descriptor=self._descriptors.get(face_id))
            return
        holder = self.records[body_owner]
        if target is None or target == body_owner:
            self._attach(holder, IdKind.FACE, face_id)
        elif holder.anonymous and self.records[target].body_id is None:
            self._merge(holder, self.records[target], now)
            self._attach(self.records[target], IdKind.FACE, face_id)
        else:
            logger.warning("identity_conflict", face_id=face_id, body_id=body_id,
                           body_person=body_owner, identified_person=target)
            self._attach(holder, IdKind.FACE, face_id)

    def _join(self, face_holder: PersonRecord, body_holder: PersonRecord, now: float) -> None:
        """Fuse a face-only person with a body-only person matched in a later frame."""
        if not (face_holder.anonymous or body_holder.anonymous):
            logger.warning("identity_conflict", face_id=face_holder.face_id, body_id=body_holder.body_id,
                           body_person=body_holder.person_id, identified_person=face_holder.person_id)
            return
        if face_holder.anonymous and not body_holder.anonymous:
            self._merge(face_holder, body_holder, now)
        else:
            self._merge(body_holder, face_holder, now)

    def _merge(self, provisional: PersonRecord, identified: PersonRecord, now: float) -> None:
        for kind in (IdKind.FACE, IdKind.BODY, IdKind.VOICE):
            entity = getattr(provisional, f"{kind.value}_id")
            if entity and getattr(identified, f"{kind.value}_id") is None:
                self._attach(identified, kind, entity)
            elif entity:
                self._owner.pop(entity, None)
        if identified.demographics is None:
            identified.demographics = provisional.demographics
        del self.records[provisional.person_id]
        self._retired.append(provisional)
        logger.info("person_merged", retired=provisional.person_id, into=identified.person_id, t=now)

    def _associate_voices(self, now: float) -> None:
        voices = [v for v in self._confirmed(IdKind.VOICE, now) if v not in self._owner]
        if not voices:
            return
        bearings = {}
        for voice_id in voices:
            pose = self._lookup(self.sensor, frame_name("voice", voice_id), now)
            if pose is not None:
                axis = pose.axis(0)
                bearings[voice_id] = math.atan2(axis[1], axis[0])
        person_bearings = {}
        for person_id, record in sorted(self.records.items()):
            if record.voice_id is not None or not (record.face_id or record.body_id):
                continue
            source = self._frame_source(record, now)
            if source is None:
                continue
            parent, local = source
            pose = self._lookup(self.sensor, parent, now)
            if pose is None:
                continue
            position = pose.compose(local).translation
            person_bearings[person_id] = math.atan2(position[1], position[0])
        for candidate in associate([], [], bearings, person_bearings, self.config):
            self._attach(self.records[candidate.second], IdKind.VOICE, candidate.first)
        for voice_id in voices:
            if voice_id not in self._owner:
                self._create(now, "voice", voice_id=voice_id)

    # -- state ---------------------------------------------------------------

    def _frame_source(self, record: PersonRecord, now: float) -> Optional[Tuple[str, Transform]]:
        if record.face_id:
            face_frame = frame_name("face", record.face_id)
            if self._has_frame(face_frame, now):
                record.frame_source = "face"
                return face_frame, Transform.identity()
            roi = self._face_roi.get(record.face_id)
            if roi is not None and self._has_frame(self.sensor, now):
                position = face_position_from_roi(roi, self.intrinsics, self.config.head_width)
                record.frame_source = "face_roi"
                return self.sensor, Transform.from_axes(position, -position, (0.0, 0.0, 1.0))
        if record.body_id:
            head_frame = frame_name("head", record.body_id)
            if self._has_frame(head_frame, now):
                record.frame_source = "body"
                return head_frame, Transform.identity()
        if record.voice_id:
            voice_frame = frame_name("voice", record.voice_id)
            if self._has_frame(voice_frame, now):
                if record.person_id not in self._low_quality_logged:
                    logger.info("voice_only_localisation", person_id=record.person_id,
                                voice_id=record.voice_id, range_m=self.config.voice_nominal_range,
                                quality="low")
                    self._low_quality_logged.add(record.person_id)
                record.frame_source = "voice"
                return voice_frame, Transform((self.config.voice_nominal_range, 0.0, 0.0))
        return None

    def _update_states(self, now: float) -> None:
        self._frames = {}
        for person_id, record in sorted(self.records.items()):
            if record.tracked:
                record.location_confidence = 1.0
                record.last_seen = now
                record.lost_at = None
                source = self._frame_source(record, now)
                if source is not None:
                    parent, local = source
                    record.last_known_frame = self.bus.tf.lookup(self.world, parent, now).compose(local)
                    self._frames[person_id] = source
                elif record.last_known_frame is not None:
                    self._frames[person_id] = (self.world, record.last_known_frame)
                continue
            if record.last_seen is None:
                record.location_confidence = 0.0
                continue
            if record.lost_at is None:
                record.lost_at = now
                record.frame_source = "last_known"
                logger.info("person_lost", person_id=person_id, t=now)
            elapsed = now - record.lost_at
            record.location_confidence = 0.5 * max(0.0, 1.0 - elapsed / self.config.forget_after)
            if record.location_confidence > 0.0 and record.last_known_frame is not None:
                self._frames[person_id] = (self.world, record.last_known_frame)

    # -- output --------------------------------------------------------------

    def _publish_once(self, person_id: str, leaf: str, message, value, now: float) -> None:
        key = (person_id, leaf)
        if self._published.get(key) == value:
            return
        self._published[key] = value
        self.bus.publish(entity_topic(IdKind.PERSON, person_id, leaf), message, now)

    def _publish_ids(self, person_id: str, ids: Mapping[str, Optional[str]], now: float) -> None:
        for leaf in ("face_id", "body_id", "voice_id"):
            value = ids.get(leaf) or ""
            if (person_id, leaf) not in self._published and not value:
                continue
            self._publish_once(person_id, leaf, String(data=value), value, now)

    def _publish(self, now: float) -> None:
        for retired in self._retired:
            self._publish_ids(retired.person_id, {}, now)
        self._retired = []
        self.bus.update_tracked(IdKind.PERSON, self.records.keys(), now)
        for person_id, record in sorted(self.records.items()):
            self._publish_ids(person_id, {"face_id": record.face_id, "body_id": record.body_id,
                                          "voice_id": record.voice_id}, now)
            if record.name:
                self._publish_once(person_id, "name", String(data=record.name), record.name, now)
            if record.native_language:
                self._publish_once(person_id, "native_language", String(data=record.native_language),
                                   record.native_language, now)
            if record.face_id and record.face_id in self._face_demographics:
                record.demographics = self._face_demographics[record.face_id]
            if record.demographics is not None:
                self._publish_once(person_id, "demographics", record.demographics, record.demographics, now)
            confidence = canonical_float(record.location_confidence)
            self._publish_once(person_id, "location_confidence", Float32(data=confidence), confidence, now)
            if person_id in self._frames:
                parent, local = self._frames[person_id]
                self.bus.publish_transform(parent, frame_name("person", person_id), local, now)
        for body_id, skeleton in sorted(self._skeletons.items()):
            attitude = classify_body_attitude(skeleton)
            if self._attitudes.get(body_id) != attitude:
                self._attitudes[body_id] = attitude
                self.bus.publish(entity_topic(IdKind.BODY, body_id, "attitude"), attitude, now)
        self._publish_gaze(now)
        self._publish_groups(now)

    def _gaze_inputs(self, now: float) -> Tuple[Dict[str, Transform], Dict[str, np.ndarray], Set[str]]:
        gazes, faces, closed = {}, {}, set()
        for person_id, record in sorted(self.records.items()):
            if not record.face_id:
                continue
            face = self._lookup(self.world, frame_name("face", record.face_id), now)
            if face is None:
                continue
            faces[person_id] = np.asarray(face.translation)
            gaze = self._lookup(self.world, frame_name("gaze", record.face_id), now)
            gazes[person_id] = gaze if gaze is not None else face.compose(FACE_TO_GAZE)
            if (self.config.respect_eyes_closed
                    and self._au45.get(record.face_id, 0.0) >= self.config.eyes_closed_au45_intensity):
                closed.add(person_id)
        return gazes, faces, closed

    def detect_gaze(self, now: float) -> GazesStamped:
        gazes, faces, closed = self._gaze_inputs(now)
        return detect_gaze(gazes, faces, self.config.gaze_cone_deg, now, closed)

    def _publish_gaze(self, now: float) -> None:
        message = self.detect_gaze(now)
        pairs = tuple((g.sender, g.receiver) for g in message.gazes)
        if pairs != self._last_gazes:
            self._last_gazes = pairs
            self.bus.publish(interaction_topic("gaze"), message, now)

    def detect_groups(self, now: float) -> GroupsStamped:
        positions = {
            person_id: np.asarray(record.last_known_frame.translation)
            for person_id, record in sorted(self.records.items())
            if record.location_confidence > 0.5 and record.last_known_frame is not None
        }
        return detect_groups(positions, self.config.group_radius, now, self._groups)

    def _publish_groups(self, now: float) -> None:
        message = self.detect_groups(now)
        signature = tuple((g.group_id, tuple(g.members)) for g in message.groups)
        if signature != self._last_groups:
            self._last_groups = signature
            self.bus.publish(interaction_topic("groups"), message, now)

    # -- main loop -----------------------------------------------------------

    def tick(self, now: float) -> None:
        if self._last_tick is not None and now < self._last_tick:
            raise TimeRegressionError(f"tick at t={now} after t={self._last_tick}")
        self._ingest()
        self._refresh_live(now)
        self._associate_faces_bodies(now)
        self._associate_voices(now)
        self._update_states(now)
        self._publish(now)
        self._last_tick = now

    def snapshot(self) -> Dict[str, Dict[str, object]]:
        return {
            person_id: {
                "face_id": record.face_id, "body_id": record.body_id, "voice_id": record.voice_id,
                "name": record.name, "location_confidence": record.location_confidence,
                "frame_source": record.frame_source,
            }
            for person_id, record in sorted(self.records.items())
        }


def is_fusion_output(event: LogEvent) -> bool:
    """True for events the person manager itself publishes."""
    if event.topic == TF_TOPIC:
        return str(event.payload.get("child", "")).startswith("person_")
    topic = parse_topic(event.topic)
    return topic.kind == IdKind.PERSON or topic.namespace == "interactions" or topic.leaf == "attitude"


def replay_fusion(source, sink=None, seed: Optional[int] = None) -> Tuple[PersonManager, EventRecorder]:
    """Re-run fusion over a recorded log, discarding its recorded fusion output.

    The header's seed, configs and known persons rebuild the manager, so a
    log produced by the simulator replays to an identical log. A ``seed``
    replaces the recorded one, header included.
    """
    header, _ = read_log(source)
    if seed is not None:
        header = {**header, "seed": seed}
    bus = HRIBus(BusConfig(**header.get("bus", {})))
    recorder = bus.record(sink, header)
    manager = PersonManager(
        bus, PersonManagerConfig(**header.get("person_manager", {})), int(header.get("seed", 0)),
        [KnownPerson.from_dict(known) for known in header.get("known_persons", [])],
    )
    replay(source, bus, keep=lambda event: not is_fusion_output(event), on_tick=manager.tick)
    bus.stop_recording(recorder)
    logger.info("fusion_replayed", events=recorder.count, persons=len(manager.records))
    return manager, recorder

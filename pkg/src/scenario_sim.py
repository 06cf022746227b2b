"""Scripted stand-in for the perception nodes.

A scenario is a JSON file describing actors, their timelines and the
sensor. ``Simulation.emit(t)`` publishes one tick of face, body and voice
detections on the bus and records the ground truth the scoring code
compares against.
"""
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from scipy.spatial.transform import Rotation
import structlog

from .body_pipeline import BodyPipeline
from .config_manager import Config, SimulatorConfig
from .event_log import EventRecorder, make_header
from .exceptions import CodecError, ScenarioLoadError
from .hri_bus import HRIBus, entity_topic
from .hri_codec import canonical_dumps, loads
from .hri_kinematics import JointState, KinematicModel, face_pose, forward_kinematics, generate_model, keypoints_3d
from .hri_model import (
    ABSENT_KEYPOINT,
    AUDIO_FEATURE_COUNT,
    AUDIO_FEATURE_NAMES,
    BLINK_ACTION_UNIT,
    DESCRIPTOR_DIMENSION,
    LANDMARK_COUNT,
    LANDMARK_GROUPS,
    ActionUnit,
    AgeAndGender,
    AudioFeatures,
    Bool,
    Expression,
    ExpressionCategory,
    FacialActionUnits,
    FacialLandmarks,
    IdentityDescriptor,
    IdKind,
    Landmark,
    RegionOfInterest,
    Skeleton2D,
    SkeletonKeypoint,
    String,
    canonical_float,
    new_transient_id,
)
from .hri_tf import FACE_TO_GAZE, Transform, frame_name
from .interactions import connected_groups, gaze_angle
from .perception import CameraIntrinsics
from .person_manager import KnownPerson, PersonManager
from .scoring import FusionScorer

logger = structlog.get_logger()

SCENARIO_FORMAT = "hri-scenario"
SCENARIO_VERSION = 1
TIME_EPSILON = 1e-9
ROBOT = "robot"
TRUTH_MODEL_ID = "00000000"


class _ScenarioModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpeechSegment(_ScenarioModel):
    start: float
    end: float
    text: str

    @model_validator(mode="after")
    def _ordered(self):
        if self.end <= self.start:
            raise ValueError("speech segment must end after it starts")
        return self


class Interval(_ScenarioModel):
    start: float = Field(ge=0.0)
    end: float
    position: Tuple[float, float]
    velocity: Tuple[float, float] = (0.0, 0.0)
    facing: Union[float, str] = ROBOT
    looking_at: Optional[str] = None
    face: bool = True
    body: bool = True
    voice: bool = False
    blinking: bool = False
    posture: Literal["neutral", "hands_raised", "pointing"] = "neutral"
    expression: ExpressionCategory = ExpressionCategory.NEUTRAL
    action_units: Dict[int, float] = Field(default_factory=dict)
    speech: List[SpeechSegment] = Field(default_factory=list)
    pitch_hz: float = Field(default=140.0, gt=0.0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.end <= self.start:
            raise ValueError("interval must end after it starts")
        for segment in self.speech:
            if segment.start < self.start or segment.end > self.end:
                raise ValueError("speech segments must lie inside their interval")
        if self.speech and not self.voice:
            raise ValueError("speech requires voice to be visible")
        return self

    def contains(self, t: float) -> bool:
        return self.start - TIME_EPSILON <= t < self.end - TIME_EPSILON

    def position_at(self, t: float) -> np.ndarray:
        return np.asarray(self.position) + np.asarray(self.velocity) * (t - self.start)


class ActorScript(_ScenarioModel):
    name: str = Field(min_length=1)
    height: float = Field(ge=0.5, le=2.5)
    descriptor: Optional[List[float]] = None
    native_language: Optional[str] = None
    age: Optional[float] = Field(default=None, ge=0.0)
    gender: Optional[Literal["female", "male", "other"]] = None
    timeline: List[Interval]

    @field_validator("descriptor")
    @classmethod
    def _descriptor(cls, value):
        if value is not None and len(value) != DESCRIPTOR_DIMENSION:
            raise ValueError(f"descriptor must have {DESCRIPTOR_DIMENSION} values")
        return value

    @field_validator("timeline")
    @classmethod
    def _ordered(cls, value):
        for before, after in zip(value, value[1:]):
            if after.start < before.end - TIME_EPSILON:
                raise ValueError("intervals must be time-ordered and non-overlapping")
        return value

    def interval_at(self, t: float) -> Optional[Interval]:
        for interval in self.timeline:
            if interval.contains(t):
                return interval
        return None

    def identity_descriptor(self) -> np.ndarray:
        if self.descriptor is not None:
            return np.asarray(self.descriptor, dtype=float)
        return descriptor_for(self.name)


class SensorSpec(_ScenarioModel):
    focal_length: float = Field(default=600.0, gt=0.0)
    width: int = Field(default=640, gt=0)
    height: int = Field(default=480, gt=0)
    frame: str = "camera"
    world_frame: str = "map"
    position: Tuple[float, float, float] = (0.0, 0.0, 1.2)
    yaw_deg: float = 0.0

    def pose(self) -> Transform:
        return Transform.from_rotation(Rotation.from_euler("z", self.yaw_deg, degrees=True), self.position)


class NoiseSpec(_ScenarioModel):
    position_sigma: Optional[float] = Field(default=None, ge=0.0)
    facing_sigma_deg: Optional[float] = Field(default=None, ge=0.0)
    descriptor_sigma: Optional[float] = Field(default=None, ge=0.0)


class Scenario(_ScenarioModel):
    format: Literal["hri-scenario"] = SCENARIO_FORMAT
    version: Literal[1] = SCENARIO_VERSION
    name: str
    description: str = ""
    seed: int = Field(default=0, ge=0)
    duration: float = Field(gt=0.0)
    tick: float = Field(default=0.1, gt=0.0)
    sensor: SensorSpec = Field(default_factory=SensorSpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    config: Dict[str, Any] = Field(default_factory=dict)
    known_persons: List[str] = Field(default_factory=list)
    actors: List[ActorScript]

    @model_validator(mode="after")
    def _references(self):
        names = [actor.name for actor in self.actors]
        if len(names) != len(set(names)):
            raise ValueError("actor names must be unique")
        if ROBOT in names:
            raise ValueError(f"'{ROBOT}' is reserved")
        targets = set(names) | {ROBOT}
        for actor in self.actors:
            for interval in actor.timeline:
                for reference in (interval.looking_at, interval.facing):
                    if isinstance(reference, str) and reference not in targets:
                        raise ValueError(f"{actor.name} refers to unknown actor '{reference}'")
        for known in self.known_persons:
            if known not in names:
                raise ValueError(f"known person '{known}' is not an actor")
        return self

    def actor(self, name: str) -> ActorScript:
        for actor in self.actors:
            if actor.name == name:
                return actor
        raise KeyError(name)

    def ticks(self) -> List[float]:
        count = int(math.floor(self.duration / self.tick + TIME_EPSILON))
        return [canonical_float(k * self.tick) for k in range(count + 1)]

    def with_noise(self, **sigmas: float) -> "Scenario":
        return self.model_copy(update={"noise": self.noise.model_copy(update=sigmas)})

    def without_blinks(self) -> "Scenario":
        actors = [
            actor.model_copy(update={"timeline": [i.model_copy(update={"blinking": False}) for i in actor.timeline]})
            for actor in self.actors
        ]
        return self.model_copy(update={"actors": actors})

    def effective_config(self, config: Optional[Config] = None) -> Config:
        config = (config or Config()).with_person_manager({
            **self.config,
            "focal_length_px": self.sensor.focal_length,
            "image_width": self.sensor.width,
            "image_height": self.sensor.height,
            "sensor_frame": self.sensor.frame,
            "world_frame": self.sensor.world_frame,
        })
        noise = {key: value for key, value in self.noise.model_dump().items() if value is not None}
        if noise:
            config = config.model_copy(update={"simulator": config.simulator.model_copy(update=noise)})
        return config


def _segment(frame: str) -> str:
    return frame[: -len(TRUTH_MODEL_ID) - 1]


def descriptor_for(name: str) -> np.ndarray:
    """A fixed unit 16-vector derived from a name."""
    seed = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")
    vector = np.random.default_rng(seed).standard_normal(DESCRIPTOR_DIMENSION)
    return vector / np.linalg.norm(vector)


def _format_errors(exc: ValidationError) -> List[Dict[str, Any]]:
    return [
        {"path": ".".join(str(part) for part in error["loc"]), "message": error["msg"]}
        for error in exc.errors()
    ]


def parse_scenario(data: Any, path: str = "<scenario>") -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        details = _format_errors(exc)
        first = details[0]
        raise ScenarioLoadError(path, f"{first['path']}: {first['message']}", details) from None


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioLoadError(str(path), f"cannot read scenario: {exc.strerror}") from None
    try:
        data = loads(text)
    except CodecError as exc:
        raise ScenarioLoadError(str(path), f"malformed JSON: {exc}") from None
    scenario = parse_scenario(data, str(path))
    logger.info("scenario_loaded", path=str(path), scenario=scenario.name, actors=len(scenario.actors))
    return scenario


def _landmark_template() -> np.ndarray:
    """Unit-square positions of the 67 facial landmarks, front view."""
    points = np.zeros((LANDMARK_COUNT, 2))

    def arc(indices, cx, cy, rx, ry, start, stop):
        angles = np.linspace(start, stop, len(indices))
        for index, angle in zip(indices, angles):
            points[index] = (cx + rx * math.cos(angle), cy + ry * math.sin(angle))

    arc(LANDMARK_GROUPS["jaw"], 0.5, 0.45, 0.45, 0.5, math.pi, 0.0)
    points[:17, 1] = 0.45 + np.abs(points[:17, 1] - 0.45)
    arc(LANDMARK_GROUPS["right_brow"], 0.3, 0.3, 0.12, 0.05, math.pi, 2 * math.pi)
    arc(LANDMARK_GROUPS["left_brow"], 0.7, 0.3, 0.12, 0.05, math.pi, 2 * math.pi)
    for offset, index in enumerate(range(27, 31)):
        points[index] = (0.5, 0.38 + 0.06 * offset)
    arc(range(31, 36), 0.5, 0.6, 0.08, 0.02, math.pi, 0.0)
    arc(LANDMARK_GROUPS["right_eye"], 0.3, 0.4, 0.07, 0.03, math.pi, 3 * math.pi)
    arc(LANDMARK_GROUPS["left_eye"], 0.7, 0.4, 0.07, 0.03, math.pi, 3 * math.pi)
    arc(LANDMARK_GROUPS["outer_lip"], 0.5, 0.75, 0.15, 0.06, math.pi, 3 * math.pi)
    arc(LANDMARK_GROUPS["inner_lip"], 0.5, 0.75, 0.09, 0.03, math.pi, 3 * math.pi)
    return np.clip(points, 0.0, 1.0)


LANDMARK_TEMPLATE = _landmark_template()


def posture_joints(posture: str) -> Dict[str, float]:
    if posture == "hands_raised":
        return {"l_shoulder_x": 2.6, "r_shoulder_x": -2.6}
    if posture == "pointing":
        return {"l_shoulder_y": -math.pi / 2}
    return {}


@dataclass
class ActorPose:
    """Noise-free pose of one actor at one tick, in the world frame."""

    root: Transform
    segments: Dict[str, Transform]
    face: Transform
    joints: Dict[str, float]

    @property
    def head(self) -> np.ndarray:
        return np.asarray(self.segments["head"].translation)


@dataclass
class TickTruth:
    t: float
    actors: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    gazes: List[Tuple[str, str]] = field(default_factory=list)
    groups: List[List[str]] = field(default_factory=list)

    def as_dict(self) -> Dict[str, Any]:
        return {"t": self.t, "actors": self.actors, "gazes": [list(pair) for pair in self.gazes],
                "groups": self.groups}


@dataclass
class GroundTruth:
    scenario: str
    seed: int
    ticks: List[TickTruth] = field(default_factory=list)

    def as_dict(self) -> Dict[str, Any]:
        return {"scenario": self.scenario, "seed": self.seed, "ticks": [tick.as_dict() for tick in self.ticks]}

    def dumps(self) -> str:
        return canonical_dumps(self.as_dict()) + "\n"

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GroundTruth":
        ticks = [
            TickTruth(t=tick["t"], actors=tick["actors"], gazes=[tuple(pair) for pair in tick["gazes"]],
                      groups=tick["groups"])
            for tick in data["ticks"]
        ]
        return cls(scenario=data["scenario"], seed=data["seed"], ticks=ticks)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GroundTruth":
        return cls.from_dict(loads(Path(path).read_text(encoding="utf-8")))


def truth_path(log_path: Union[str, Path]) -> Path:
    log_path = Path(log_path)
    return log_path.with_name(log_path.stem + ".truth.json")


class Simulation:
    def __init__(self, scenario: Scenario, bus: HRIBus, config: Optional[Config] = None,
                 seed: Optional[int] = None):
        self.scenario = scenario
        self.bus = bus
        self.config = scenario.effective_config(config)
        self.noise: SimulatorConfig = self.config.simulator
        self.seed = scenario.seed if seed is None else seed
        self.rng = np.random.default_rng([self.seed, 0])
        sensor = scenario.sensor
        self.intrinsics = CameraIntrinsics(sensor.focal_length, sensor.width, sensor.height)
        self.camera = sensor.pose()
        self.world_to_camera = self.camera.inverse()
        self.bodies = BodyPipeline(bus, sensor.frame, self.config.kinematics)
        self.models: Dict[str, KinematicModel] = {
            actor.name: generate_model(TRUTH_MODEL_ID, actor.height, min_height=self.config.kinematics.min_height,
                                       max_height=self.config.kinematics.max_height)
            for actor in scenario.actors
        }
        self._ids: Dict[Tuple[str, IdKind], Optional[str]] = {}
        self._spoken: set = set()
        self.truth = GroundTruth(scenario=scenario.name, seed=self.seed)

    # -- geometry ------------------------------------------------------------

    def _facing(self, interval: Interval, position: np.ndarray, anchors: Dict[str, np.ndarray]) -> float:
        if isinstance(interval.facing, (int, float)):
            return math.radians(interval.facing)
        target = np.asarray(self.camera.translation) if interval.facing == ROBOT else anchors[interval.facing]
        return math.atan2(target[1] - position[1], target[0] - position[0])

    def _pose(self, actor: ActorScript, interval: Interval, t: float, yaw: float,
              gaze_target: Optional[np.ndarray]) -> ActorPose:
        model = self.models[actor.name]
        position = interval.position_at(t)
        root = Transform.from_rotation(
            Rotation.from_euler("z", yaw), (position[0], position[1], model.length("hip_height"))
        )
        joints = {**JointState.zero().values, **posture_joints(interval.posture)}
        for _ in range(3 if gaze_target is not None else 1):
            local = forward_kinematics(model, joints)
            segments = {_segment(name): root.compose(pose) for name, pose in local.items()}
            face = root.compose(face_pose(model, local))
            if gaze_target is None:
                break
            torso = segments["torso"]
            direction = torso.rotation_matrix.T @ (np.asarray(gaze_target) - np.asarray(face.translation))
            direction = direction / np.linalg.norm(direction)
            joints["head_z"] = float(np.clip(math.atan2(direction[1], direction[0]), -math.pi / 2, math.pi / 2))
            joints["head_y"] = float(np.clip(-math.asin(np.clip(direction[2], -1.0, 1.0)),
                                             -math.pi / 2, math.pi / 2))
        local = forward_kinematics(model, joints)
        segments = {_segment(name): root.compose(pose) for name, pose in local.items()}
        return ActorPose(root=root, segments=segments, face=root.compose(face_pose(model, local)), joints=joints)

    def _poses(self, t: float) -> Dict[str, Tuple[Interval, ActorPose]]:
        active = {}
        for actor in self.scenario.actors:
            interval = actor.interval_at(t)
            if interval is not None:
                active[actor.name] = (actor, interval)
        anchors = {name: interval.position_at(t) for name, (_, interval) in active.items()}
        yaws = {}
        for name, (actor, interval) in active.items():
            yaw = self._facing(interval, anchors[name], anchors)
            if self.noise.facing_sigma_deg > 0:
                kappa = 1.0 / math.radians(self.noise.facing_sigma_deg) ** 2
                yaw += float(self.rng.vonmises(0.0, kappa))
            yaws[name] = yaw
        poses = {name: self._pose(actor, interval, t, yaws[name], None) for name, (actor, interval) in active.items()}
        for _ in range(2):
            faces = {name: np.asarray(pose.face.translation) for name, pose in poses.items()}
            faces[ROBOT] = np.asarray(self.camera.translation)
            poses = {
                name: self._pose(actor, interval, t, yaws[name],
                                 faces.get(interval.looking_at) if interval.looking_at else None)
                for name, (actor, interval) in active.items()
            }
        return {name: (active[name][1], pose) for name, pose in poses.items()}

    def _noisy(self, point: Sequence[float]) -> np.ndarray:
        point = np.asarray(point, dtype=float)
        if self.noise.position_sigma > 0:
            point = point + self.rng.normal(0.0, self.noise.position_sigma, 3)
        return point

    def _in_camera(self, point: Sequence[float]) -> np.ndarray:
        return self.world_to_camera.apply(point)

    # -- ids -----------------------------------------------------------------

    def _update_ids(self, t: float, visible: Dict[IdKind, List[str]]) -> None:
        for kind in (IdKind.FACE, IdKind.BODY, IdKind.VOICE):
            for actor in self.scenario.actors:
                key = (actor.name, kind)
                current = self._ids.get(key)
                if actor.name in visible[kind] and current is None:
                    self._ids[key] = new_transient_id(kind, self.rng, self.bus.ids).value
                    logger.debug("transient_id_issued", actor=actor.name, kind=kind.value, entity_id=self._ids[key])
                elif actor.name not in visible[kind] and current is not None:
                    self._ids[key] = None
                    if kind == IdKind.BODY:
                        self.bodies.forget(current)
            live = [self._ids[(name, kind)] for name in visible[kind]]
            self.bus.update_tracked(kind, live, t)

    # -- emission ------------------------------------------------------------

    def _face_roi(self, position_cam: np.ndarray) -> Optional[RegionOfInterest]:
        projected = self.intrinsics.project(position_cam)
        if projected is None:
            return None
        size = self.intrinsics.focal_length * self.config.person_manager.head_width / position_cam[0]
        x = min(max(0, int(round(projected[0] - size / 2))), self.intrinsics.width - 1)
        y = min(max(0, int(round(projected[1] - size / 2))), self.intrinsics.height - 1)
        return RegionOfInterest(x_offset=x, y_offset=y, width=max(1, int(round(size))), height=max(1, int(round(size))))

    def _emit_face(self, actor: ActorScript, interval: Interval, pose: ActorPose, face_id: str, t: float) -> None:
        frame = self.scenario.sensor.frame
        face_world = Transform(self._noisy(pose.face.translation), pose.face.rotation)
        face_cam = self.world_to_camera.compose(face_world)
        roi = self._face_roi(np.asarray(face_cam.translation))
        if roi is not None:
            self.bus.publish(entity_topic(IdKind.FACE, face_id, "roi"), roi, t)
            landmarks = [
                Landmark(x=roi.x_offset + u * roi.width, y=roi.y_offset + v * roi.height, confidence=1.0)
                for u, v in LANDMARK_TEMPLATE
            ]
            self.bus.publish(entity_topic(IdKind.FACE, face_id, "landmarks"),
                             FacialLandmarks(landmarks=landmarks, timestamp=t), t)
        units = dict(interval.action_units)
        if interval.blinking:
            units[BLINK_ACTION_UNIT] = 5.0
        facs = FacialActionUnits(units=[
            ActionUnit(au_code=code, intensity=intensity, confidence=1.0) for code, intensity in sorted(units.items())
        ])
        self.bus.publish(entity_topic(IdKind.FACE, face_id, "facs"), facs, t)
        self.bus.publish(entity_topic(IdKind.FACE, face_id, "expression"),
                         Expression(category=interval.expression, confidence=1.0), t)
        descriptor = actor.identity_descriptor()
        if self.noise.descriptor_sigma > 0:
            descriptor = descriptor + self.rng.normal(0.0, self.noise.descriptor_sigma, DESCRIPTOR_DIMENSION)
        self.bus.publish(entity_topic(IdKind.FACE, face_id, "descriptor"),
                         IdentityDescriptor(values=descriptor.tolist()), t)
        if actor.age is not None and actor.gender is not None:
            self.bus.publish(entity_topic(IdKind.FACE, face_id, "demographics"), AgeAndGender(
                age=actor.age, age_confidence=0.9, gender=actor.gender, gender_confidence=0.9), t)
        face_frame = frame_name("face", face_id)
        self.bus.publish_transform(frame, face_frame, face_cam, t)
        self.bus.publish_transform(face_frame, frame_name("gaze", face_id), FACE_TO_GAZE, t)

    def _emit_body(self, actor: ActorScript, pose: ActorPose, body_id: str, t: float) -> None:
        model = self.models[actor.name]
        keypoints = keypoints_3d(model, pose.joints, self.world_to_camera.compose(pose.root))
        keypoints = np.array([self._noisy(point) for point in keypoints])
        pixels = [self.intrinsics.project(point) for point in keypoints]
        visible = [p for p in pixels if p is not None]
        if visible:
            us, vs = zip(*visible)
            margin = self.noise.face_body_margin * (max(vs) - min(vs))
            left = max(0.0, min(us) - margin)
            top = max(0.0, min(vs) - margin)
            right = min(float(self.intrinsics.width), max(us) + margin)
            bottom = min(float(self.intrinsics.height), max(vs) + margin)
            if right > left and bottom > top and left < self.intrinsics.width and top < self.intrinsics.height:
                x, y = int(math.floor(left)), int(math.floor(top))
                roi = RegionOfInterest(x_offset=x, y_offset=y, width=max(1, int(math.ceil(right)) - x),
                                       height=max(1, int(math.ceil(bottom)) - y))
                self.bus.publish(entity_topic(IdKind.BODY, body_id, "roi"), roi, t)
        points = []
        for pixel in pixels:
            if pixel is None or not self.intrinsics.contains(*pixel):
                points.append(ABSENT_KEYPOINT)
            else:
                points.append(SkeletonKeypoint(x=pixel[0] / self.intrinsics.width,
                                               y=pixel[1] / self.intrinsics.height, confidence=1.0))
        self.bus.publish(entity_topic(IdKind.BODY, body_id, "skeleton2d"),
                         Skeleton2D(keypoints=points, timestamp=t), t)
        confidence = [1.0 if pixel is not None else 0.0 for pixel in pixels]
        self.bodies.process(body_id, actor.height, keypoints, confidence, t)

    def _emit_voice(self, actor: ActorScript, interval: Interval, pose: ActorPose, voice_id: str, t: float) -> float:
        mouth = self._in_camera(self._noisy(pose.face.translation))
        azimuth = math.atan2(mouth[1], mouth[0])
        self.bus.publish_transform(self.scenario.sensor.frame, frame_name("voice", voice_id),
                                   Transform.from_rotation(Rotation.from_euler("z", azimuth)), t)
        segment = next((s for s in interval.speech if s.start - TIME_EPSILON <= t < s.end - TIME_EPSILON), None)
        self.bus.publish(entity_topic(IdKind.VOICE, voice_id, "is_speaking"), Bool(data=segment is not None), t)
        if segment is not None and (actor.name, segment.start) not in self._spoken:
            self._spoken.add((actor.name, segment.start))
            self.bus.publish(entity_topic(IdKind.VOICE, voice_id, "speech"), String(data=segment.text), t)
        features = [0.0] * AUDIO_FEATURE_COUNT
        if segment is not None:
            features[AUDIO_FEATURE_NAMES.index("rms_energy")] = 0.1
            features[AUDIO_FEATURE_NAMES.index("f0_hz")] = interval.pitch_hz
            features[AUDIO_FEATURE_NAMES.index("zero_crossing_rate")] = 0.05
        self.bus.publish(entity_topic(IdKind.VOICE, voice_id, "features"),
                         AudioFeatures(features=features, timestamp=t), t)
        return azimuth

    # -- truth ---------------------------------------------------------------

    def _localisation(self, interval: Interval, pose: ActorPose) -> np.ndarray:
        if interval.face:
            return np.asarray(pose.face.translation)
        if interval.body:
            return pose.head
        mouth = self._in_camera(pose.face.translation)
        azimuth = math.atan2(mouth[1], mouth[0])
        offset = Rotation.from_euler("z", azimuth).apply([self.config.person_manager.voice_nominal_range, 0.0, 0.0])
        return self.camera.apply(offset)

    def _truth(self, t: float, poses: Dict[str, Tuple[Interval, ActorPose]]) -> TickTruth:
        pm = self.config.person_manager
        tick = TickTruth(t=t)
        for name, (interval, pose) in sorted(poses.items()):
            tick.actors[name] = {
                "position": [float(v) for v in pose.face.translation],
                "face_id": self._ids.get((name, IdKind.FACE)),
                "body_id": self._ids.get((name, IdKind.BODY)),
                "voice_id": self._ids.get((name, IdKind.VOICE)),
                "looking_at": interval.looking_at,
                "blinking": interval.blinking,
            }
        with_face = {name: pose for name, (interval, pose) in poses.items() if interval.face}
        cone = math.radians(pm.gaze_cone_deg)
        for sender in sorted(with_face):
            if poses[sender][0].blinking:
                continue
            gaze = with_face[sender].face.compose(FACE_TO_GAZE)
            for receiver in sorted(with_face):
                if receiver != sender and gaze_angle(gaze, with_face[receiver].face.translation) < cone:
                    tick.gazes.append((sender, receiver))
        perceived = {
            name: self._localisation(interval, pose) for name, (interval, pose) in poses.items()
            if interval.face or interval.body or interval.voice
        }
        tick.groups = connected_groups(perceived, pm.group_radius)
        return tick

    # -- main loop -----------------------------------------------------------

    def emit(self, t: float) -> TickTruth:
        sensor = self.scenario.sensor
        self.bus.publish_transform(sensor.world_frame, sensor.frame, self.camera, t)
        poses = self._poses(t)
        visible = {
            kind: sorted(name for name, (interval, _) in poses.items() if getattr(interval, kind.value))
            for kind in (IdKind.FACE, IdKind.BODY, IdKind.VOICE)
        }
        self._update_ids(t, visible)
        for name, (interval, pose) in sorted(poses.items()):
            actor = self.scenario.actor(name)
            if interval.face:
                self._emit_face(actor, interval, pose, self._ids[(name, IdKind.FACE)], t)
            if interval.body:
                self._emit_body(actor, pose, self._ids[(name, IdKind.BODY)], t)
            if interval.voice:
                self._emit_voice(actor, interval, pose, self._ids[(name, IdKind.VOICE)], t)
        tick = self._truth(t, poses)
        self.truth.ticks.append(tick)
        return tick

    def known_persons(self) -> List[KnownPerson]:
        return [
            KnownPerson(
                name=name,
                descriptor=tuple(canonical_float(v) for v in self.scenario.actor(name).identity_descriptor()),
                native_language=self.scenario.actor(name).native_language,
            )
            for name in self.scenario.known_persons
        ]


def run(scenario: Scenario, bus: HRIBus, config: Optional[Config] = None, seed: Optional[int] = None,
        person_manager: Optional[PersonManager] = None) -> GroundTruth:
    """Play the whole scenario; the person manager, if any, ticks after every emission."""
    simulation = Simulation(scenario, bus, config, seed)
    for t in scenario.ticks():
        simulation.emit(t)
        if person_manager is not None:
            person_manager.tick(t)
    logger.info("scenario_finished", scenario=scenario.name, ticks=len(simulation.truth.ticks))
    return simulation.truth


@dataclass
class SimulationResult:
    bus: HRIBus
    manager: PersonManager
    truth: GroundTruth
    recorder: EventRecorder


def log_header(scenario: Scenario, config: Config, seed: int, known: Sequence[KnownPerson]) -> Dict[str, Any]:
    return make_header(
        scenario=scenario.name, seed=seed, tick=scenario.tick, duration=scenario.duration,
        bus=config.bus.model_dump(), person_manager=config.person_manager.model_dump(),
        known_persons=[person.as_dict() for person in known],
    )


def simulate(scenario: Scenario, config: Optional[Config] = None, seed: Optional[int] = None,
             sink: Any = None) -> SimulationResult:
    """Scenario plus person manager end to end, recorded to ``sink``."""
    seed = scenario.seed if seed is None else seed
    effective = scenario.effective_config(config)
    bus = HRIBus(effective.bus)
    simulation = Simulation(scenario, bus, config, seed)
    known = simulation.known_persons()
    recorder = bus.record(sink, log_header(scenario, effective, seed, known))
    manager = PersonManager(bus, effective.person_manager, seed, known)
    for t in scenario.ticks():
        simulation.emit(t)
        manager.tick(t)
    bus.stop_recording(recorder)
    logger.info("simulation_recorded", scenario=scenario.name, seed=seed, events=recorder.count)
    return SimulationResult(bus=bus, manager=manager, truth=simulation.truth, recorder=recorder)


def score(truth: GroundTruth, log_source: Any, thresholds: Optional[Dict[str, float]] = None) -> Dict[str, Any]:
    return FusionScorer(thresholds).score(truth, log_source)

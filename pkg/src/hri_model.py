"""Identifiers and message schemas of the /humans data model.

Every wire-visible message is a frozen pydantic model. Float fields are
canonicalised to 9 significant digits at construction, so a message and
its canonical text encoding carry exactly the same values.
"""
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Annotated, Any, Dict, List, Mapping, Optional, Set, Type, Union

import numpy as np
from pydantic import (
    AfterValidator,
    BaseModel,
    ConfigDict,
    Field,
    StringConstraints,
    ValidationError,
    field_validator,
    model_validator,
)
from pydantic_core import PydanticCustomError
import structlog

from .exceptions import IdentifierError

logger = structlog.get_logger()

ID_LENGTH = 8
ID_PATTERN = re.compile(r"^[0-9a-f]{8}$")
SIGNIFICANT_DIGITS = 9

LANDMARK_COUNT = 67
SKELETON_KEYPOINT_COUNT = 18
AUDIO_FEATURE_COUNT = 16
DESCRIPTOR_DIMENSION = 16

COCO_KEYPOINTS = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)
COCO_INDEX = {name: index for index, name in enumerate(COCO_KEYPOINTS)}

AUDIO_FEATURE_NAMES = (
    "zero_crossing_rate", "rms_energy", "f0_hz", "harmonics_to_noise_ratio",
) + tuple(f"mfcc_{i}" for i in range(1, 13))

# 67-point facial landmark convention: jaw 0-16, brows 17-26, nose 27-35,
# right eye 36-41, left eye 42-47, mouth 48-66 (outer 48-59, inner 60-66).
LANDMARK_GROUPS = {
    "jaw": range(0, 17),
    "right_brow": range(17, 22),
    "left_brow": range(22, 27),
    "nose": range(27, 36),
    "right_eye": range(36, 42),
    "left_eye": range(42, 48),
    "outer_lip": range(48, 60),
    "inner_lip": range(60, 67),
}

BLINK_ACTION_UNIT = 45


def canonical_float(value: float) -> float:
    return float(format(value, f".{SIGNIFICANT_DIGITS}g"))


Real = Annotated[float, AfterValidator(canonical_float)]
UnitInterval = Annotated[float, Field(ge=0.0, le=1.0), AfterValidator(canonical_float)]
SignedUnit = Annotated[float, Field(ge=-1.0, le=1.0), AfterValidator(canonical_float)]
Timestamp = Annotated[float, Field(ge=0.0), AfterValidator(canonical_float)]
IdString = Annotated[str, StringConstraints(pattern=r"^[0-9a-f]{8}$")]


class MessageModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)


def _fixed_length(values: List[Any], expected: int) -> List[Any]:
    if len(values) != expected:
        raise PydanticCustomError(
            "fixed_length", "length must be {expected}", {"expected": expected, "actual": len(values)}
        )
    return values


class IdKind(str, Enum):
    FACE = "face"
    BODY = "body"
    VOICE = "voice"
    PERSON = "person"

    @property
    def plural(self) -> str:
        return KIND_PLURALS[self]


KIND_PLURALS = {
    IdKind.FACE: "faces",
    IdKind.BODY: "bodies",
    IdKind.VOICE: "voices",
    IdKind.PERSON: "persons",
}
TRANSIENT_KINDS = (IdKind.FACE, IdKind.BODY, IdKind.VOICE)


class Identifier(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: IdString
    kind: IdKind

    def __str__(self) -> str:
        return self.value


class IdRegistry:
    """Every identifier ever issued or observed in one session."""

    def __init__(self):
        self._issued: Set[str] = set()
        self._lock = threading.Lock()

    def __contains__(self, value: object) -> bool:
        return str(value) in self._issued

    def __len__(self) -> int:
        return len(self._issued)

    def register(self, value: str) -> None:
        with self._lock:
            self._issued.add(value)

    def draw(self, kind: IdKind, rng: np.random.Generator) -> Identifier:
        with self._lock:
            while True:
                value = format(int(rng.integers(0, 2 ** 32)), "08x")
                if value not in self._issued:
                    self._issued.add(value)
                    return Identifier(value=value, kind=kind)
                logger.debug("identifier_collision_redraw", kind=kind.value, value=value)


def new_transient_id(kind: Union[IdKind, str], rng: np.random.Generator,
                     registry: Optional[IdRegistry] = None) -> Identifier:
    kind = IdKind(kind)
    if kind not in TRANSIENT_KINDS:
        raise IdentifierError("person identifiers are issued by the person manager only")
    return (registry if registry is not None else IdRegistry()).draw(kind, rng)


def new_person_id(rng: np.random.Generator, registry: Optional[IdRegistry] = None) -> Identifier:
    return (registry if registry is not None else IdRegistry()).draw(IdKind.PERSON, rng)


def is_identifier(value: str) -> bool:
    return bool(ID_PATTERN.match(value))


class RegionOfInterest(MessageModel):
    x_offset: Annotated[int, Field(ge=0)]
    y_offset: Annotated[int, Field(ge=0)]
    width: Annotated[int, Field(gt=0)]
    height: Annotated[int, Field(gt=0)]


class Landmark(MessageModel):
    x: Real
    y: Real
    confidence: UnitInterval


class FacialLandmarks(MessageModel):
    landmarks: List[Landmark]
    timestamp: Timestamp

    @field_validator("landmarks")
    @classmethod
    def _count(cls, value):
        return _fixed_length(value, LANDMARK_COUNT)


class ActionUnit(MessageModel):
    au_code: Annotated[int, Field(gt=0)]
    intensity: Annotated[float, Field(ge=0.0, le=5.0), AfterValidator(canonical_float)]
    confidence: UnitInterval


class FacialActionUnits(MessageModel):
    units: List[ActionUnit]

    @field_validator("units")
    @classmethod
    def _unique_codes(cls, value):
        codes = [unit.au_code for unit in value]
        if len(codes) != len(set(codes)):
            raise PydanticCustomError("unique_au_codes", "au_codes must be unique")
        return value

    def intensity(self, au_code: int) -> float:
        for unit in self.units:
            if unit.au_code == au_code:
                return unit.intensity
        return 0.0


class ExpressionCategory(str, Enum):
    NEUTRAL = "neutral"
    HAPPY = "happy"
    SAD = "sad"
    ANGRY = "angry"
    FEARFUL = "fearful"
    DISGUSTED = "disgusted"
    SURPRISED = "surprised"


class Expression(MessageModel):
    category: Optional[ExpressionCategory] = None
    valence: Optional[SignedUnit] = None
    arousal: Optional[SignedUnit] = None
    confidence: UnitInterval

    @model_validator(mode="after")
    def _category_or_plane(self):
        if self.category is None and (self.valence is None) != (self.arousal is None):
            missing = "arousal" if self.arousal is None else "valence"
            raise PydanticCustomError(
                "valence_arousal_pair", "valence and arousal must both be present", {"field": missing}
            )
        if self.category is None and self.valence is None:
            raise PydanticCustomError(
                "category_or_valence_arousal", "category or valence/arousal required", {"field": "category"}
            )
        return self


class SkeletonKeypoint(MessageModel):
    x: UnitInterval
    y: UnitInterval
    confidence: UnitInterval

    @property
    def present(self) -> bool:
        return self.confidence > 0.0


ABSENT_KEYPOINT = SkeletonKeypoint(x=0.0, y=0.0, confidence=0.0)


class Skeleton2D(MessageModel):
    keypoints: List[SkeletonKeypoint]
    timestamp: Timestamp

    @field_validator("keypoints")
    @classmethod
    def _count(cls, value):
        return _fixed_length(value, SKELETON_KEYPOINT_COUNT)

    def point(self, name: str) -> SkeletonKeypoint:
        return self.keypoints[COCO_INDEX[name]]


class BodyAttitude(MessageModel):
    hands_on_face: bool
    arms_crossed: bool
    hands_raised: bool
    confidence: UnitInterval


class AudioFeatures(MessageModel):
    features: List[Real]
    timestamp: Timestamp

    @field_validator("features")
    @classmethod
    def _shape(cls, value):
        _fixed_length(value, AUDIO_FEATURE_COUNT)
        for index in (AUDIO_FEATURE_NAMES.index("rms_energy"), AUDIO_FEATURE_NAMES.index("f0_hz")):
            if value[index] < 0:
                raise PydanticCustomError(
                    "non_negative", "{name} must be >= 0",
                    {"name": AUDIO_FEATURE_NAMES[index], "field": str(index)},
                )
        return value

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(AUDIO_FEATURE_NAMES, self.features))


class AudioData(MessageModel):
    data: List[Annotated[int, Field(ge=0, le=255)]]


class Gender(str, Enum):
    FEMALE = "female"
    MALE = "male"
    OTHER = "other"


class AgeAndGender(MessageModel):
    age: Annotated[float, Field(ge=0.0), AfterValidator(canonical_float)]
    age_confidence: UnitInterval
    gender: Gender
    gender_confidence: UnitInterval


class Group(MessageModel):
    group_id: IdString
    members: List[IdString]

    @field_validator("members")
    @classmethod
    def _members(cls, value):
        if len(value) < 2:
            raise PydanticCustomError("group_size", "a group needs at least 2 members")
        if len(set(value)) != len(value):
            raise PydanticCustomError("unique_members", "members must be unique")
        return value


class GroupsStamped(MessageModel):
    timestamp: Timestamp
    groups: List[Group]


class GazeSenderReceiver(MessageModel):
    sender: IdString
    receiver: IdString

    @model_validator(mode="after")
    def _distinct(self):
        if self.sender == self.receiver:
            raise PydanticCustomError("sender_is_receiver", "sender must differ from receiver", {"field": "receiver"})
        return self


class GazesStamped(MessageModel):
    timestamp: Timestamp
    gazes: List[GazeSenderReceiver]


class String(MessageModel):
    data: str


class Bool(MessageModel):
    data: bool


class Float32(MessageModel):
    data: Real


class IdsList(MessageModel):
    ids: List[IdString]

    @field_validator("ids")
    @classmethod
    def _sorted_unique(cls, value):
        if list(value) != sorted(set(value)):
            raise PydanticCustomError("sorted_unique", "ids must be sorted and unique")
        return value


class IdentityDescriptor(MessageModel):
    values: List[Real]

    @field_validator("values")
    @classmethod
    def _dimension(cls, value):
        return _fixed_length(value, DESCRIPTOR_DIMENSION)


class TransformStamped(MessageModel):
    parent: Annotated[str, StringConstraints(min_length=1)]
    child: Annotated[str, StringConstraints(min_length=1)]
    translation: List[Real]
    rotation: List[Real]
    timestamp: Timestamp

    @field_validator("translation")
    @classmethod
    def _translation(cls, value):
        return _fixed_length(value, 3)

    @field_validator("rotation")
    @classmethod
    def _rotation(cls, value):
        _fixed_length(value, 4)
        if abs(float(np.linalg.norm(value)) - 1.0) > 1e-6:
            raise PydanticCustomError("unit_quaternion", "rotation must be a unit quaternion (w, x, y, z)")
        return value

    @model_validator(mode="after")
    def _no_self_edge(self):
        if self.parent == self.child:
            raise PydanticCustomError("self_edge", "parent and child must differ", {"field": "child"})
        return self


SCHEMAS: Dict[str, Type[MessageModel]] = {
    cls.__name__: cls
    for cls in (
        RegionOfInterest, FacialLandmarks, FacialActionUnits, Expression, Skeleton2D,
        BodyAttitude, AudioFeatures, AudioData, AgeAndGender, Group, GroupsStamped,
        GazeSenderReceiver, GazesStamped, String, Bool, Float32, IdsList,
        IdentityDescriptor, TransformStamped,
    )
}


def resolve_schema(schema: Union[str, Type[MessageModel]]) -> Type[MessageModel]:
    if isinstance(schema, str):
        try:
            return SCHEMAS[schema]
        except KeyError:
            raise KeyError(f"unknown schema {schema!r}") from None
    if schema.__name__ not in SCHEMAS:
        raise KeyError(f"unknown schema {schema.__name__!r}")
    return schema


def schema_name(message: Union[MessageModel, Type[MessageModel]]) -> str:
    cls = message if isinstance(message, type) else type(message)
    return cls.__name__


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str
    message: str

    def as_dict(self) -> Dict[str, str]:
        return {"path": self.path, "rule": self.rule, "message": self.message}


@dataclass
class ValidationReport:
    schema: str
    violations: List[Violation] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations

    def paths(self) -> Set[str]:
        return {violation.path for violation in self.violations}

    def rules(self) -> Set[str]:
        return {violation.rule for violation in self.violations}

    def __str__(self) -> str:
        return "; ".join(f"{v.path or '<root>'}: {v.message} [{v.rule}]" for v in self.violations) or "valid"


def _violation(error: Mapping[str, Any]) -> Violation:
    ctx = error.get("ctx") or {}
    parts = [str(part) for part in error.get("loc", ())]
    if ctx.get("field"):
        parts.append(str(ctx["field"]))
    return Violation(path=".".join(parts), rule=error["type"], message=error["msg"])


def validate(message: Union[MessageModel, Mapping[str, Any]],
             schema: Optional[Union[str, Type[MessageModel]]] = None) -> ValidationReport:
    if isinstance(message, BaseModel):
        cls = resolve_schema(schema) if schema is not None else type(message)
        data = message.model_dump(warnings=False)
    else:
        if schema is None:
            raise TypeError("schema is required when validating raw data")
        cls = resolve_schema(schema)
        data = message
    report = ValidationReport(schema=cls.__name__)
    try:
        cls.model_validate(data)
    except ValidationError as exc:
        report.violations.extend(_violation(error) for error in exc.errors())
    return report

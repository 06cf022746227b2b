"""Height-parameterised human kinematic model, URDF rendering, FK and analytic IK.

All body frames use x forward, y left, z up. The ``body_<id>`` root sits at
the hip midpoint and coincides with ``waist_<id>``.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from lxml import etree
from scipy.spatial.transform import Rotation
import structlog

from .exceptions import EstimationError, RangeError
from .hri_model import COCO_INDEX, COCO_KEYPOINTS
from .hri_tf import SEGMENT_NAMES, Transform, frame_name

logger = structlog.get_logger()

MIN_HEIGHT = 0.5
MAX_HEIGHT = 2.5
LIMIT_TOLERANCE = 1e-9
HALF_PI = math.pi / 2


@dataclass(frozen=True)
class AnthropometricTable:
    """Segment dimensions as fractions of total body height."""

    hip_height: float = 0.530
    shoulder_height: float = 0.818
    shoulder_half_width: float = 0.129
    hip_half_width: float = 0.0955
    upper_arm: float = 0.186
    forearm: float = 0.146
    hand: float = 0.108
    thigh: float = 0.245
    shank: float = 0.246
    ankle_height: float = 0.039
    head_height: float = 0.130
    neck_to_sellion: float = 0.052
    sellion_forward: float = 0.020
    eye_half_spacing: float = 0.018
    nose_forward: float = 0.035
    nose_up: float = 0.035
    ear_back: float = 0.010
    ear_half_spacing: float = 0.040
    ear_up: float = 0.048

    @property
    def torso(self) -> float:
        return self.shoulder_height - self.hip_height

    def leg_chain_error(self) -> float:
        return abs(self.hip_height - (self.thigh + self.shank + self.ankle_height))

    def check(self) -> List[str]:
        problems = [name for name, value in self.__dict__.items() if value <= 0]
        if self.leg_chain_error() > 0.01:
            problems.append("leg_chain")
        return problems


DEFAULT_TABLE = AnthropometricTable()


@dataclass(frozen=True)
class JointSpec:
    name: str
    group: str
    axis: Tuple[float, float, float]
    lower: float
    upper: float


@dataclass(frozen=True)
class SegmentSpec:
    name: str
    parent: Optional[str]
    offset: Tuple[str, float, str]
    joints: Tuple[str, ...]


Z, Y, X, NEG_Y = (0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (0.0, -1.0, 0.0)

JOINTS: Tuple[JointSpec, ...] = (
    JointSpec("waist_z", "waist", Z, -HALF_PI, HALF_PI),
    JointSpec("head_z", "head", Z, -HALF_PI, HALF_PI),
    JointSpec("head_y", "head", Y, -HALF_PI, HALF_PI),
    JointSpec("head_x", "head", X, -HALF_PI, HALF_PI),
    JointSpec("l_shoulder_z", "l_shoulder", Z, -math.pi, math.pi),
    JointSpec("l_shoulder_y", "l_shoulder", Y, -HALF_PI, HALF_PI),
    JointSpec("l_shoulder_x", "l_shoulder", X, -math.pi, math.pi),
    JointSpec("r_shoulder_z", "r_shoulder", Z, -math.pi, math.pi),
    JointSpec("r_shoulder_y", "r_shoulder", Y, -HALF_PI, HALF_PI),
    JointSpec("r_shoulder_x", "r_shoulder", X, -math.pi, math.pi),
    JointSpec("l_elbow_y", "l_elbow", NEG_Y, 0.0, 2.6),
    JointSpec("r_elbow_y", "r_elbow", NEG_Y, 0.0, 2.6),
    JointSpec("l_hip_y", "l_hip", Y, -HALF_PI, HALF_PI),
    JointSpec("l_hip_x", "l_hip", X, -HALF_PI, HALF_PI),
    JointSpec("r_hip_y", "r_hip", Y, -HALF_PI, HALF_PI),
    JointSpec("r_hip_x", "r_hip", X, -HALF_PI, HALF_PI),
    JointSpec("l_knee_y", "l_knee", Y, 0.0, 2.6),
    JointSpec("r_knee_y", "r_knee", Y, 0.0, 2.6),
)
JOINT_INDEX = {joint.name: joint for joint in JOINTS}
JOINT_NAMES = tuple(joint.name for joint in JOINTS)
JOINT_GROUPS: Dict[str, int] = {}
for _joint in JOINTS:
    JOINT_GROUPS[_joint.group] = JOINT_GROUPS.get(_joint.group, 0) + 1

# offset = (axis, table attribute, sign): the segment origin in its parent.
SEGMENTS: Tuple[SegmentSpec, ...] = (
    SegmentSpec("waist", None, ("z", 0.0, ""), ()),
    SegmentSpec("torso", "waist", ("z", 0.0, ""), ("waist_z",)),
    SegmentSpec("head", "torso", ("z", 1.0, "torso"), ("head_z", "head_y", "head_x")),
    SegmentSpec("l_shoulder", "torso", ("yz", 1.0, "shoulder_half_width"), ("l_shoulder_z", "l_shoulder_y", "l_shoulder_x")),
    SegmentSpec("r_shoulder", "torso", ("yz", -1.0, "shoulder_half_width"), ("r_shoulder_z", "r_shoulder_y", "r_shoulder_x")),
    SegmentSpec("l_elbow", "l_shoulder", ("z", -1.0, "upper_arm"), ("l_elbow_y",)),
    SegmentSpec("r_elbow", "r_shoulder", ("z", -1.0, "upper_arm"), ("r_elbow_y",)),
    SegmentSpec("l_wrist", "l_elbow", ("z", -1.0, "forearm"), ()),
    SegmentSpec("r_wrist", "r_elbow", ("z", -1.0, "forearm"), ()),
    SegmentSpec("l_hip", "waist", ("y", 1.0, "hip_half_width"), ("l_hip_y", "l_hip_x")),
    SegmentSpec("r_hip", "waist", ("y", -1.0, "hip_half_width"), ("r_hip_y", "r_hip_x")),
    SegmentSpec("l_knee", "l_hip", ("z", -1.0, "thigh"), ("l_knee_y",)),
    SegmentSpec("r_knee", "r_hip", ("z", -1.0, "thigh"), ("r_knee_y",)),
    SegmentSpec("l_ankle", "l_knee", ("z", -1.0, "shank"), ()),
    SegmentSpec("r_ankle", "r_knee", ("z", -1.0, "shank"), ()),
)

SEGMENT_LENGTH_FRACTIONS = {
    "waist": lambda t: 2 * t.hip_half_width,
    "torso": lambda t: t.torso,
    "head": lambda t: t.head_height,
    "l_shoulder": lambda t: t.upper_arm,
    "r_shoulder": lambda t: t.upper_arm,
    "l_elbow": lambda t: t.forearm,
    "r_elbow": lambda t: t.forearm,
    "l_wrist": lambda t: t.hand,
    "r_wrist": lambda t: t.hand,
    "l_hip": lambda t: t.thigh,
    "r_hip": lambda t: t.thigh,
    "l_knee": lambda t: t.shank,
    "r_knee": lambda t: t.shank,
    "l_ankle": lambda t: t.ankle_height,
    "r_ankle": lambda t: t.ankle_height,
}


@dataclass(frozen=True)
class KinematicModel:
    body_id: str
    height: float
    table: AnthropometricTable = DEFAULT_TABLE

    @property
    def links(self) -> Dict[str, float]:
        return {name: SEGMENT_LENGTH_FRACTIONS[name](self.table) * self.height for name in SEGMENT_NAMES}

    @property
    def joints(self) -> Tuple[JointSpec, ...]:
        return JOINTS

    def length(self, attribute: str) -> float:
        return getattr(self.table, attribute) * self.height

    def segment_offset(self, segment: SegmentSpec) -> Tuple[float, float, float]:
        axes, sign, attribute = segment.offset
        if not attribute:
            return (0.0, 0.0, 0.0)
        value = sign * self.length(attribute)
        if axes == "z":
            return (0.0, 0.0, value)
        if axes == "y":
            return (0.0, value, 0.0)
        return (0.0, value, self.length("torso"))

    def head_points(self) -> Dict[str, np.ndarray]:
        """Facial keypoints in the head segment frame."""
        h, t = self.height, self.table
        return {
            "nose": np.array([t.nose_forward, 0.0, t.nose_up]) * h,
            "r_eye": np.array([t.sellion_forward, -t.eye_half_spacing, t.neck_to_sellion]) * h,
            "l_eye": np.array([t.sellion_forward, t.eye_half_spacing, t.neck_to_sellion]) * h,
            "r_ear": np.array([-t.ear_back, -t.ear_half_spacing, t.ear_up]) * h,
            "l_ear": np.array([-t.ear_back, t.ear_half_spacing, t.ear_up]) * h,
        }

    def sellion_offset(self) -> Transform:
        return Transform((self.length("sellion_forward"), 0.0, self.length("neck_to_sellion")))

    def frame(self, segment: str) -> str:
        return frame_name(segment, self.body_id)


@dataclass
class JointState:
    values: Dict[str, float]
    timestamp: float = 0.0
    valid: Dict[str, bool] = field(default_factory=dict)

    @classmethod
    def zero(cls, timestamp: float = 0.0) -> "JointState":
        return cls({name: 0.0 for name in JOINT_NAMES}, timestamp, {name: True for name in JOINT_NAMES})

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def as_array(self) -> np.ndarray:
        return np.array([self.values[name] for name in JOINT_NAMES])


def generate_model(body_id: str, height: float, table: AnthropometricTable = DEFAULT_TABLE,
                   min_height: float = MIN_HEIGHT, max_height: float = MAX_HEIGHT) -> KinematicModel:
    if not (min_height <= height <= max_height):
        raise RangeError(f"height {height} m outside [{min_height}, {max_height}]")
    return KinematicModel(body_id=body_id, height=float(height), table=table)


def out_of_limits(values: Mapping[str, float]) -> List[str]:
    return [
        name for name, joint in JOINT_INDEX.items()
        if not (joint.lower - LIMIT_TOLERANCE <= values.get(name, 0.0) <= joint.upper + LIMIT_TOLERANCE)
    ]


def _joint_rotation(joint: JointSpec, angle: float) -> Transform:
    return Transform.from_rotation(Rotation.from_rotvec(np.asarray(joint.axis) * angle))


def forward_kinematics(model: KinematicModel,
                       joint_state: Union[JointState, Mapping[str, float]]) -> Dict[str, Transform]:
    values = joint_state.values if isinstance(joint_state, JointState) else dict(joint_state)
    bad = out_of_limits(values)
    if bad:
        raise RangeError(f"joints outside limits: {', '.join(sorted(bad))}")
    poses: Dict[str, Transform] = {}
    for segment in SEGMENTS:
        pose = poses[segment.parent] if segment.parent else Transform.identity()
        pose = pose.compose(Transform(model.segment_offset(segment)))
        for joint_name in segment.joints:
            pose = pose.compose(_joint_rotation(JOINT_INDEX[joint_name], values.get(joint_name, 0.0)))
        poses[segment.name] = pose
    return {model.frame(name): poses[name] for name in SEGMENT_NAMES}


def keypoints_3d(model: KinematicModel, joint_state: Union[JointState, Mapping[str, float]],
                 root: Optional[Transform] = None) -> np.ndarray:
    """The 18 COCO keypoints implied by a joint state, in the root's parent frame."""
    poses = forward_kinematics(model, joint_state)
    head = poses[model.frame("head")]
    points = np.zeros((len(COCO_KEYPOINTS), 3))
    for name, offset in model.head_points().items():
        points[COCO_INDEX[name]] = head.apply(offset)
    points[COCO_INDEX["neck"]] = head.translation
    for name in ("shoulder", "elbow", "wrist", "hip", "knee", "ankle"):
        for side in ("l", "r"):
            points[COCO_INDEX[f"{side}_{name}"]] = poses[model.frame(f"{side}_{name}")].translation
    if root is not None:
        points = np.array([root.apply(p) for p in points])
    return points


def face_pose(model: KinematicModel, segments: Mapping[str, Transform]) -> Transform:
    return segments[model.frame("head")].compose(model.sellion_offset())


def _format(value: float) -> str:
    return format(value, ".9g")


def _vector(values: Sequence[float]) -> str:
    return " ".join(_format(v + 0.0) for v in values)


def emit_urdf(model: KinematicModel) -> str:
    """Render the model as URDF; 3-DoF joints become chained revolute joints."""
    suffix = model.body_id
    robot = etree.Element("robot", name=f"human_{suffix}")
    etree.SubElement(robot, "link", name=f"body_{suffix}")
    lengths = model.links

    def add_segment_link(name: str) -> None:
        link = etree.SubElement(robot, "link", name=f"{name}_{suffix}")
        length = lengths[name]
        visual = etree.SubElement(link, "visual")
        etree.SubElement(visual, "origin", xyz=_vector((0.0, 0.0, 0.0)), rpy=_vector((0.0, 0.0, 0.0)))
        geometry = etree.SubElement(visual, "geometry")
        etree.SubElement(geometry, "cylinder", radius=_format(0.1 * length), length=_format(length))

    def add_joint(name: str, kind: str, parent: str, child: str, origin: Sequence[float],
                  joint: Optional[JointSpec] = None) -> None:
        element = etree.SubElement(robot, "joint", name=f"{name}_{suffix}", type=kind)
        etree.SubElement(element, "parent", link=f"{parent}_{suffix}")
        etree.SubElement(element, "child", link=f"{child}_{suffix}")
        etree.SubElement(element, "origin", xyz=_vector(origin), rpy=_vector((0.0, 0.0, 0.0)))
        if joint is not None:
            etree.SubElement(element, "axis", xyz=_vector(joint.axis))
            etree.SubElement(element, "limit", lower=_format(joint.lower), upper=_format(joint.upper),
                             effort="0", velocity="0")

    add_segment_link("waist")
    add_joint("body_to_waist", "fixed", "body", "waist", (0.0, 0.0, 0.0))
    for segment in SEGMENTS[1:]:
        add_segment_link(segment.name)
        origin = model.segment_offset(segment)
        if not segment.joints:
            add_joint(f"{segment.name}_fixed", "fixed", segment.parent, segment.name, origin)
            continue
        parent = segment.parent
        for index, joint_name in enumerate(segment.joints):
            last = index == len(segment.joints) - 1
            # massless, zero-length helper link between chained single-axis joints
            child = segment.name if last else f"{joint_name}_helper"
            if not last:
                etree.SubElement(robot, "link", name=f"{child}_{suffix}")
            add_joint(joint_name, "revolute", parent, child, origin if index == 0 else (0.0, 0.0, 0.0),
                      JOINT_INDEX[joint_name])
            parent = child
    return etree.tostring(robot, pretty_print=True, xml_declaration=True, encoding="UTF-8").decode("utf-8")


def _unit(vector: np.ndarray) -> np.ndarray:
    return vector / np.linalg.norm(vector)


def _triangle_frame(right: np.ndarray, left: np.ndarray, apex: np.ndarray) -> np.ndarray:
    e1 = _unit(left - right)
    towards = apex - (right + left) / 2.0
    e2 = _unit(towards - np.dot(towards, e1) * e1)
    return np.column_stack([e1, e2, np.cross(e1, e2)])


def _clip(name: str, value: float) -> float:
    joint = JOINT_INDEX[name]
    return float(min(max(value, joint.lower), joint.upper))


def _pointing_without_twist(z_axis: np.ndarray) -> Tuple[float, float]:
    """(y, x) angles with zero z rotation whose frame z axis equals ``z_axis``."""
    radial = math.hypot(z_axis[0], z_axis[2])
    sign = 1.0 if z_axis[2] >= 0 else -1.0
    return math.atan2(sign * z_axis[0], sign * z_axis[2]), math.atan2(-z_axis[1], sign * radial)


def estimate_joint_state(model: KinematicModel, keypoints: np.ndarray,
                         confidence: Optional[Sequence[float]] = None,
                         timestamp: float = 0.0) -> Tuple[JointState, Transform]:
    """Recover the joint state and the body root pose from 18 COCO points.

    ``keypoints`` are expressed in the sensor frame; absent points carry
    confidence 0 (or NaN coordinates).
    """
    points = np.asarray(keypoints, dtype=float)
    if confidence is None:
        confidence = np.ones(len(COCO_KEYPOINTS))
    present = {
        name: bool(confidence[index] > 0 and np.all(np.isfinite(points[index])))
        for index, name in enumerate(COCO_KEYPOINTS)
    }
    missing = [name for name in ("l_hip", "r_hip", "l_shoulder", "r_shoulder", "neck") if not present[name]]
    if missing:
        raise EstimationError(f"missing mandatory keypoints: {', '.join(missing)}")

    def p(name: str) -> np.ndarray:
        return points[COCO_INDEX[name]]

    hip_mid = (p("l_hip") + p("r_hip")) / 2.0
    z_axis = _unit(p("neck") - hip_mid)
    y_axis = p("l_hip") - p("r_hip")
    y_axis = _unit(y_axis - np.dot(y_axis, z_axis) * z_axis)
    x_axis = np.cross(y_axis, z_axis)
    root_matrix = np.column_stack([x_axis, y_axis, z_axis])
    root = Transform.from_rotation(Rotation.from_matrix(root_matrix), hip_mid)
    to_body = root_matrix.T

    values = {name: 0.0 for name in JOINT_NAMES}
    valid = {name: False for name in JOINT_NAMES}

    shoulder_line = to_body @ (p("l_shoulder") - p("r_shoulder"))
    values["waist_z"] = _clip("waist_z", math.atan2(-shoulder_line[0], shoulder_line[1]))
    valid["waist_z"] = True
    torso_matrix = root_matrix @ Rotation.from_rotvec(np.asarray(Z) * values["waist_z"]).as_matrix()
    to_torso = torso_matrix.T

    for side in ("l", "r"):
        shoulder, elbow, wrist = f"{side}_shoulder", f"{side}_elbow", f"{side}_wrist"
        if not present[elbow]:
            continue
        direction = _unit(to_torso @ (p(elbow) - p(shoulder)))
        z_col = -direction
        x_col = None
        if present[wrist]:
            forearm = _unit(to_torso @ (p(wrist) - p(elbow)))
            perpendicular = forearm - np.dot(forearm, direction) * direction
            if np.linalg.norm(perpendicular) > 1e-9:
                x_col = _unit(perpendicular)
            else:
                valid[f"{side}_elbow_y"] = True
        if x_col is not None:
            matrix = np.column_stack([x_col, np.cross(z_col, x_col), z_col])
            yaw, pitch, roll = Rotation.from_matrix(matrix).as_euler("ZYX")
            local = matrix.T @ forearm
            values[f"{side}_elbow_y"] = _clip(f"{side}_elbow_y", math.atan2(local[0], -local[2]))
            valid[f"{side}_elbow_y"] = True
            valid[f"{shoulder}_x"] = True
        else:
            yaw = 0.0
            pitch, roll = _pointing_without_twist(z_col)
        values[f"{shoulder}_z"] = _clip(f"{shoulder}_z", yaw)
        values[f"{shoulder}_y"] = _clip(f"{shoulder}_y", pitch)
        values[f"{shoulder}_x"] = _clip(f"{shoulder}_x", roll)
        valid[f"{shoulder}_z"] = valid[f"{shoulder}_y"] = True

    for side in ("l", "r"):
        hip, knee, ankle = f"{side}_hip", f"{side}_knee", f"{side}_ankle"
        if not present[knee]:
            continue
        direction = _unit(to_body @ (p(knee) - p(hip)))
        pitch = math.atan2(-direction[0], -direction[2])
        roll = math.asin(max(-1.0, min(1.0, direction[1])))
        values[f"{hip}_y"] = _clip(f"{hip}_y", pitch)
        values[f"{hip}_x"] = _clip(f"{hip}_x", roll)
        valid[f"{hip}_y"] = valid[f"{hip}_x"] = True
        if present[ankle]:
            hip_matrix = Rotation.from_euler("YX", [values[f"{hip}_y"], values[f"{hip}_x"]]).as_matrix()
            local = hip_matrix.T @ _unit(to_body @ (p(ankle) - p(knee)))
            values[f"{knee}_y"] = _clip(f"{knee}_y", math.atan2(-local[0], -local[2]))
            valid[f"{knee}_y"] = True

    if present["r_eye"] and present["l_eye"] and present["nose"]:
        model_points = model.head_points()
        observed = _triangle_frame(to_torso @ p("r_eye"), to_torso @ p("l_eye"), to_torso @ p("nose"))
        reference = _triangle_frame(model_points["r_eye"], model_points["l_eye"], model_points["nose"])
        yaw, pitch, roll = Rotation.from_matrix(observed @ reference.T).as_euler("ZYX")
        for name, value in (("head_z", yaw), ("head_y", pitch), ("head_x", roll)):
            values[name] = _clip(name, value)
            valid[name] = True

    return JointState(values=values, timestamp=timestamp, valid=valid), root

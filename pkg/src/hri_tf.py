"""Timestamped transform tree and the human frame conventions.

Rotations are unit quaternions stored (w, x, y, z). Sensor frames follow
the x-forward, y-left, z-up convention; face frames put x out of the face
and z toward the scalp; gaze frames use optical axes (z forward, y down).
"""
import bisect
import re
import threading
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation, Slerp
import structlog

from .exceptions import (
    ConflictError,
    ExtrapolationError,
    RangeError,
    TransformLookupError,
    TreeError,
)
from .hri_model import TransformStamped

logger = structlog.get_logger()

QUATERNION_TOLERANCE = 1e-9
DEFAULT_RETENTION = 10.0

SEGMENT_NAMES = (
    "waist", "torso", "head",
    "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist", "r_wrist",
    "l_hip", "r_hip", "l_knee", "r_knee", "l_ankle", "r_ankle",
)
HUMAN_FRAME_PREFIXES = ("face", "gaze", "person", "body", "voice") + SEGMENT_NAMES
HUMAN_FRAME_PATTERN = re.compile(
    r"^(?P<prefix>" + "|".join(sorted(HUMAN_FRAME_PREFIXES, key=len, reverse=True))
    + r")_(?P<id>[0-9a-f]{8})$"
)


def frame_name(prefix: str, identifier: str) -> str:
    if prefix not in HUMAN_FRAME_PREFIXES:
        raise ValueError(f"unknown human frame prefix {prefix!r}")
    return f"{prefix}_{identifier}"


def parse_frame(name: str) -> Optional[Tuple[str, str]]:
    match = HUMAN_FRAME_PATTERN.match(name)
    if match is None:
        return None
    return match.group("prefix"), match.group("id")


def is_human_frame(name: str) -> bool:
    return parse_frame(name) is not None


def quaternion_multiply(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float, float, float]:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return (
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    )


def quaternion_matrix(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def to_scipy(q: Sequence[float]) -> Rotation:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w])


def from_scipy(rotation: Rotation) -> Tuple[float, float, float, float]:
    x, y, z, w = rotation.as_quat()
    q = np.array([w, x, y, z])
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return tuple(float(v) for v in q)


@dataclass(frozen=True)
class Transform:
    translation: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))
        object.__setattr__(self, "rotation", tuple(float(v) for v in self.rotation))
        if len(self.translation) != 3 or len(self.rotation) != 4:
            raise RangeError("transform needs a 3-vector and a (w, x, y, z) quaternion")
        norm = float(np.linalg.norm(self.rotation))
        if abs(norm - 1.0) > QUATERNION_TOLERANCE:
            raise RangeError(f"rotation is not a unit quaternion (norm {norm!r})")

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    @classmethod
    def normalized(cls, translation: Sequence[float], rotation: Sequence[float]) -> "Transform":
        q = np.asarray(rotation, dtype=float)
        return cls(tuple(translation), tuple(q / np.linalg.norm(q)))

    @classmethod
    def from_rotation(cls, rotation: Rotation, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "Transform":
        return cls(tuple(translation), from_scipy(rotation))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Transform":
        matrix = np.asarray(matrix, dtype=float)
        return cls.from_rotation(Rotation.from_matrix(matrix[:3, :3]), matrix[:3, 3])

    @classmethod
    def from_axes(cls, origin: Sequence[float], x_axis: Sequence[float], z_hint: Sequence[float]) -> "Transform":
        x = np.asarray(x_axis, dtype=float)
        x = x / np.linalg.norm(x)
        y = np.cross(np.asarray(z_hint, dtype=float), x)
        y = y / np.linalg.norm(y)
        z = np.cross(x, y)
        return cls.from_rotation(Rotation.from_matrix(np.column_stack([x, y, z])), origin)

    @classmethod
    def from_msg(cls, message: TransformStamped) -> "Transform":
        return cls.normalized(message.translation, message.rotation)

    def to_msg(self, parent: str, child: str, timestamp: float) -> TransformStamped:
        return TransformStamped(
            parent=parent, child=child, translation=list(self.translation),
            rotation=list(self.rotation), timestamp=timestamp,
        )

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quaternion_matrix(self.rotation)

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation_matrix
        matrix[:3, 3] = self.translation
        return matrix

    def axis(self, index: int) -> np.ndarray:
        return self.rotation_matrix[:, index]

    def apply(self, point: Sequence[float]) -> np.ndarray:
        return self.rotation_matrix @ np.asarray(point, dtype=float) + np.asarray(self.translation)

    def compose(self, other: "Transform") -> "Transform":
        rotated = self.rotation_matrix @ np.asarray(other.translation)
        translation = tuple(a + b for a, b in zip(self.translation, rotated))
        return Transform(translation, quaternion_multiply(self.rotation, other.rotation))

    def __matmul__(self, other: "Transform") -> "Transform":
        return self.compose(other)

    def inverse(self) -> "Transform":
        w, x, y, z = self.rotation
        conjugate = (w, -x, -y, -z)
        translation = -(quaternion_matrix(conjugate) @ np.asarray(self.translation))
        return Transform(tuple(translation), conjugate)

    def translation_distance(self, other: "Transform") -> float:
        return float(np.linalg.norm(np.subtract(self.translation, other.translation)))

    def rotation_distance(self, other: "Transform") -> float:
        dot = abs(float(np.dot(self.rotation, other.rotation)))
        return float(np.sqrt(max(0.0, 1.0 - min(1.0, dot) ** 2)))

    def is_close(self, other: "Transform", tolerance: float = 1e-9) -> bool:
        return (self.translation_distance(other) <= tolerance
                and self.rotation_distance(other) <= tolerance)


# Gaze axes expressed in the face frame: gaze z = face x, gaze y = -face z.
FACE_TO_GAZE = Transform((0.0, 0.0, 0.0), (0.5, -0.5, 0.5, -0.5))


@dataclass(frozen=True)
class StampedEdge:
    parent: str
    child: str
    transform: Transform
    timestamp: float


@dataclass(frozen=True)
class _Sample:
    timestamp: float
    parent: str
    transform: Transform


class TransformBuffer:
    """Time-indexed frame tree; one writer, many readers."""

    def __init__(self, retention: float = DEFAULT_RETENTION):
        self.retention = retention
        self._samples: Dict[str, List[_Sample]] = {}
        self._frames = set()
        self._lock = threading.RLock()

    def frames(self) -> List[str]:
        with self._lock:
            return sorted(self._frames)

    def __contains__(self, frame: str) -> bool:
        return frame in self._frames

    def set_transform(self, edge: StampedEdge) -> None:
        parent, child, timestamp = edge.parent, edge.child, edge.timestamp
        with self._lock:
            if parent == child:
                raise TreeError(f"frame {child!r} cannot be its own parent")
            samples = self._samples.setdefault(child, [])
            replace = False
            if samples:
                last = samples[-1]
                if timestamp < last.timestamp:
                    raise ConflictError(
                        f"edge {parent}->{child} at t={timestamp} is older than the last sample t={last.timestamp}"
                    )
                if timestamp == last.timestamp:
                    if last.parent != parent:
                        raise ConflictError(
                            f"frame {child!r} already has parent {last.parent!r} at t={timestamp}"
                        )
                    replace = True
            if self._reaches(parent, child, None) or self._reaches(parent, child, timestamp):
                if not samples:
                    del self._samples[child]
                raise TreeError(f"edge {parent}->{child} would create a cycle")
            sample = _Sample(timestamp, parent, edge.transform)
            if replace:
                samples[-1] = sample
            else:
                samples.append(sample)
            self._frames.update((parent, child))
            cutoff = timestamp - self.retention
            while len(samples) > 1 and samples[1].timestamp <= cutoff:
                samples.pop(0)

    def set(self, parent: str, child: str, transform: Transform, timestamp: float) -> None:
        self.set_transform(StampedEdge(parent, child, transform, timestamp))

    def _parent_near(self, frame: str, time: Optional[float]) -> Optional[str]:
        samples = self._samples.get(frame)
        if not samples:
            return None
        if time is None:
            return samples[-1].parent
        index = bisect.bisect_right([sample.timestamp for sample in samples], time) - 1
        return samples[max(index, 0)].parent

    def _reaches(self, start: str, frame: str, time: Optional[float]) -> bool:
        """Whether walking up from ``start`` (latest parents when ``time`` is None) meets ``frame``."""
        seen = set()
        ancestor: Optional[str] = start
        while ancestor is not None and ancestor not in seen:
            if ancestor == frame:
                return True
            seen.add(ancestor)
            ancestor = self._parent_near(ancestor, time)
        return False

    def latest_time(self, frame: str) -> Optional[float]:
        samples = self._samples.get(frame)
        return samples[-1].timestamp if samples else None

    def _edge_at(self, child: str, time: float) -> Optional[Tuple[str, Transform]]:
        samples = self._samples.get(child)
        if not samples:
            return None
        times = [sample.timestamp for sample in samples]
        index = bisect.bisect_left(times, time)
        if index < len(samples) and samples[index].timestamp == time:
            sample = samples[index]
            return sample.parent, sample.transform
        if index == 0 or index == len(samples):
            raise ExtrapolationError(
                f"frame {child!r} has samples in [{times[0]}, {times[-1]}], queried at t={time}"
            )
        before, after = samples[index - 1], samples[index]
        if before.parent != after.parent:
            return before.parent, before.transform
        alpha = (time - before.timestamp) / (after.timestamp - before.timestamp)
        translation = (1.0 - alpha) * np.asarray(before.transform.translation) \
            + alpha * np.asarray(after.transform.translation)
        slerp = Slerp(
            [before.timestamp, after.timestamp],
            Rotation.concatenate([to_scipy(before.transform.rotation), to_scipy(after.transform.rotation)]),
        )
        rotation = from_scipy(slerp([time])[0])
        return before.parent, Transform(tuple(translation), rotation)

    def _chain(self, frame: str, time: float) -> List[Tuple[str, Optional[Transform]]]:
        chain: List[Tuple[str, Optional[Transform]]] = []
        current = frame
        seen = set()
        while True:
            if current in seen:
                raise TreeError(f"frames above {frame!r} form a cycle at t={time}")
            seen.add(current)
            edge = self._edge_at(current, time)
            if edge is None:
                chain.append((current, None))
                return chain
            parent, transform = edge
            chain.append((current, transform))
            current = parent

    def parent_of(self, frame: str, time: float) -> Optional[str]:
        with self._lock:
            edge = self._edge_at(frame, time)
            return edge[0] if edge else None

    def lookup(self, target: str, source: str, time: float) -> Transform:
        """Pose of ``source`` expressed in ``target`` coordinates at ``time``."""
        with self._lock:
            for frame in (target, source):
                if frame not in self._frames:
                    raise TransformLookupError(f"unknown frame {frame!r}")
            if target == source:
                return Transform.identity()
            source_chain = self._chain(source, time)
            target_chain = self._chain(target, time)
            target_index = {frame: index for index, (frame, _) in enumerate(target_chain)}
            for source_depth, (frame, _) in enumerate(source_chain):
                if frame in target_index:
                    ancestor, target_depth = frame, target_index[frame]
                    break
            else:
                raise TransformLookupError(
                    f"frames {target!r} (root {target_chain[-1][0]!r}) and {source!r} "
                    f"(root {source_chain[-1][0]!r}) are not connected at t={time}"
                )
            source_pose = _fold([transform for _, transform in source_chain[:source_depth]])
            if target_depth == 0:
                return source_pose
            target_pose = _fold([transform for _, transform in target_chain[:target_depth]])
            if source_depth == 0:
                return target_pose.inverse()
            return target_pose.inverse().compose(source_pose)

    def can_transform(self, target: str, source: str, time: float) -> bool:
        try:
            self.lookup(target, source, time)
            return True
        except (TransformLookupError, ExtrapolationError):
            return False


def _fold(edges_upward: List[Transform]) -> Transform:
    """Compose child->...->ancestor edges, listed from the child upward."""
    pose = edges_upward[-1]
    for transform in reversed(edges_upward[:-1]):
        pose = pose.compose(transform)
    return pose


def _issue(rule: str, message: str, severity: str = "critical", **details) -> Dict[str, object]:
    return {"type": rule, "severity": severity, "message": message, **details}


def check_face_frame(face: Transform, up: Sequence[float] = (0.0, 0.0, 1.0),
                     eyes: Optional[Tuple[Sequence[float], Sequence[float]]] = None,
                     tolerance: float = 0.01) -> List[Dict[str, object]]:
    """Check a face pose (in the sensor frame) against the sellion convention.

    ``eyes`` is the (right_eye, left_eye) pair of 3D points in the same frame.
    """
    issues = []
    up = np.asarray(up, dtype=float)
    if float(np.dot(face.axis(2), up)) <= 0.0:
        issues.append(_issue("z-axis orientation", "z-axis orientation: z must point toward the scalp"))
    if eyes is not None:
        right_eye, left_eye = (np.asarray(p, dtype=float) for p in eyes)
        midpoint = (right_eye + left_eye) / 2.0
        offset = float(np.linalg.norm(np.asarray(face.translation) - midpoint))
        if offset > tolerance:
            issues.append(_issue("origin", f"origin is {offset:.4f} m from the eye midpoint", offset=offset))
        eye_line = left_eye - right_eye
        eye_line = eye_line / np.linalg.norm(eye_line)
        if float(np.dot(face.axis(1), eye_line)) <= 0.0:
            issues.append(_issue("y-axis orientation", "y-axis orientation: y must point toward the left eye"))
        if abs(float(np.dot(face.axis(0), eye_line))) > 0.1:
            issues.append(_issue("x-axis orientation", "x-axis orientation: x must point out of the face"))
    return issues


def check_gaze_frame(gaze: Transform, up: Sequence[float] = (0.0, 0.0, 1.0),
                     face: Optional[Transform] = None) -> List[Dict[str, object]]:
    issues = []
    if float(np.dot(gaze.axis(1), np.asarray(up, dtype=float))) >= 0.0:
        issues.append(_issue("y-axis orientation", "y-axis orientation: gaze y must point down"))
    if face is not None:
        if gaze.translation_distance(face) > QUATERNION_TOLERANCE:
            issues.append(_issue("collocation", "gaze frame is not collocated with its face frame"))
        relative = face.inverse().compose(gaze)
        if relative.rotation_distance(FACE_TO_GAZE) > 1e-6:
            issues.append(_issue("gaze rotation", "gaze rotation differs from the face-to-gaze constant"))
    return issues


def edges_from(messages: Iterable[TransformStamped]) -> List[StampedEdge]:
    return [
        StampedEdge(msg.parent, msg.child, Transform.from_msg(msg), msg.timestamp)
        for msg in messages
    ]

"""Camera geometry helpers and the rule-based perception estimators."""
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import structlog

from .config_manager import PersonManagerConfig
from .exceptions import RangeError
from .hri_model import BodyAttitude, RegionOfInterest, Skeleton2D

logger = structlog.get_logger()

HEAD_WIDTH = 0.15
HANDS_ON_FACE_RATIO = 0.15
ATTITUDE_KEYPOINTS = ("nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow")
OPTIONAL_WRIST = "l_wrist"


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera looking along +x of a sensor frame (y left, z up)."""

    focal_length: float = 600.0
    width: int = 640
    height: int = 480

    @classmethod
    def from_config(cls, config: PersonManagerConfig) -> "CameraIntrinsics":
        return cls(config.focal_length_px, config.image_width, config.image_height)

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    def project(self, point: Sequence[float]) -> Optional[Tuple[float, float]]:
        x, y, z = (float(v) for v in point)
        if x <= 0.0:
            return None
        return self.cx - self.focal_length * y / x, self.cy - self.focal_length * z / x

    def back_project(self, u: float, v: float, depth: float) -> np.ndarray:
        return np.array([depth, (self.cx - u) * depth / self.focal_length, (self.cy - v) * depth / self.focal_length])

    def contains(self, u: float, v: float) -> bool:
        return 0.0 <= u < self.width and 0.0 <= v < self.height

    def bearing(self, point: Sequence[float]) -> float:
        return float(np.arctan2(point[1], point[0]))


def estimate_face_distance(roi: RegionOfInterest, focal_length: float, head_width: float = HEAD_WIDTH) -> float:
    if roi.width <= 0:
        raise RangeError("roi width must be positive")
    return focal_length * head_width / roi.width


def face_position_from_roi(roi: RegionOfInterest, intrinsics: CameraIntrinsics,
                           head_width: float = HEAD_WIDTH) -> np.ndarray:
    depth = estimate_face_distance(roi, intrinsics.focal_length, head_width)
    u = roi.x_offset + roi.width / 2.0
    v = roi.y_offset + roi.height / 2.0
    return intrinsics.back_project(u, v, depth)


def roi_upper_third(roi: RegionOfInterest) -> Tuple[float, float, float, float]:
    return float(roi.x_offset), float(roi.y_offset), float(roi.width), roi.height / 3.0


def containment_ratio(inner: RegionOfInterest, outer: Tuple[float, float, float, float]) -> float:
    """Fraction of ``inner``'s area that lies inside the ``outer`` box."""
    ox, oy, ow, oh = outer
    left = max(inner.x_offset, ox)
    top = max(inner.y_offset, oy)
    right = min(inner.x_offset + inner.width, ox + ow)
    bottom = min(inner.y_offset + inner.height, oy + oh)
    if right <= left or bottom <= top:
        return 0.0
    return (right - left) * (bottom - top) / float(inner.width * inner.height)


def classify_body_attitude(skeleton: Skeleton2D) -> BodyAttitude:
    points = {name: skeleton.point(name) for name in ATTITUDE_KEYPOINTS}
    if any(not point.present for point in points.values()):
        return BodyAttitude(hands_on_face=False, arms_crossed=False, hands_raised=False, confidence=0.0)
    left = skeleton.point(OPTIONAL_WRIST)
    confidence = float(np.mean([point.confidence for point in points.values()] + [left.confidence]))
    wrists = ["r_wrist"]
    if left.present:
        points[OPTIONAL_WRIST] = left
        wrists.append(OPTIONAL_WRIST)

    def xy(name: str) -> np.ndarray:
        return np.array([points[name].x, points[name].y])

    reference = float(np.linalg.norm(xy("l_shoulder") - xy("r_shoulder")))
    nose = xy("nose")
    wrist_to_nose = min(np.linalg.norm(xy(wrist) - nose) for wrist in wrists)
    hands_on_face = bool(reference > 0.0 and wrist_to_nose < HANDS_ON_FACE_RATIO * reference)
    # image y grows downward
    hands_raised = any(points[wrist].y < points["nose"].y for wrist in wrists)
    side = 1.0 if points["l_shoulder"].x >= points["r_shoulder"].x else -1.0
    arms_crossed = bool(
        left.present
        and side * (points["l_wrist"].x - points["r_elbow"].x) < 0.0
        and side * (points["r_wrist"].x - points["l_elbow"].x) > 0.0
    )
    return BodyAttitude(
        hands_on_face=hands_on_face, arms_crossed=arms_crossed,
        hands_raised=hands_raised, confidence=confidence,
    )

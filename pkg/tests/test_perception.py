import numpy as np
import pytest

from src.config_manager import Config
from src.exceptions import RangeError
from src.hri_model import ABSENT_KEYPOINT, COCO_KEYPOINTS, RegionOfInterest, Skeleton2D, SkeletonKeypoint
from src.perception import (
    CameraIntrinsics,
    classify_body_attitude,
    containment_ratio,
    estimate_face_distance,
    face_position_from_roi,
    roi_upper_third,
)

UPRIGHT = {
    "nose": (0.5, 0.2), "neck": (0.5, 0.3),
    "r_shoulder": (0.4, 0.3), "l_shoulder": (0.6, 0.3),
    "r_elbow": (0.38, 0.45), "l_elbow": (0.62, 0.45),
    "r_wrist": (0.38, 0.6), "l_wrist": (0.62, 0.6),
}


@pytest.fixture
def config():
    return Config()


def _skeleton(**moved):
    points = {**UPRIGHT, **moved}
    keypoints = [
        SkeletonKeypoint(x=points[name][0], y=points[name][1], confidence=1.0) if name in points else ABSENT_KEYPOINT
        for name in COCO_KEYPOINTS
    ]
    return Skeleton2D(keypoints=keypoints, timestamp=0.0)


@pytest.mark.unit
def test_intrinsics_follow_the_config(config):
    camera = CameraIntrinsics.from_config(config.person_manager)

    assert (camera.focal_length, camera.width, camera.height) == (600.0, 640, 480)
    assert (camera.cx, camera.cy) == (320.0, 240.0)


@pytest.mark.unit
def test_projection_round_trip():
    camera = CameraIntrinsics()
    u, v = camera.project((2.0, 0.5, 0.3))

    assert (u, v) == pytest.approx((170.0, 150.0))
    assert camera.back_project(u, v, 2.0) == pytest.approx([2.0, 0.5, 0.3])
    assert camera.contains(u, v)
    assert camera.project((-1.0, 0.0, 0.0)) is None
    assert not camera.contains(640.0, 10.0)


@pytest.mark.unit
def test_bearing_is_measured_from_the_optical_axis():
    assert CameraIntrinsics().bearing((1.0, 1.0, 0.0)) == pytest.approx(np.pi / 4)


@pytest.mark.unit
def test_face_distance_from_roi_width():
    roi = RegionOfInterest(x_offset=295, y_offset=215, width=50, height=50)

    assert estimate_face_distance(roi, 600.0) == pytest.approx(1.8)
    assert face_position_from_roi(roi, CameraIntrinsics()) == pytest.approx([1.8, 0.0, 0.0])


@pytest.mark.unit
def test_face_distance_needs_a_positive_width():
    roi = RegionOfInterest.model_construct(x_offset=0, y_offset=0, width=0, height=10)

    with pytest.raises(RangeError):
        estimate_face_distance(roi, 600.0)


@pytest.mark.unit
def test_containment_in_the_upper_third_of_a_body():
    body = RegionOfInterest(x_offset=0, y_offset=0, width=100, height=90)
    upper = roi_upper_third(body)

    assert upper == (0.0, 0.0, 100.0, 30.0)
    assert containment_ratio(RegionOfInterest(x_offset=10, y_offset=10, width=10, height=10), upper) == 1.0
    assert containment_ratio(RegionOfInterest(x_offset=10, y_offset=25, width=10, height=10), upper) == 0.5
    assert containment_ratio(RegionOfInterest(x_offset=10, y_offset=60, width=10, height=10), upper) == 0.0


@pytest.mark.unit
def test_neutral_posture():
    attitude = classify_body_attitude(_skeleton())

    assert not (attitude.hands_on_face or attitude.arms_crossed or attitude.hands_raised)
    assert attitude.confidence == 1.0


@pytest.mark.unit
@pytest.mark.parametrize("moved, flag", [
    ({"r_wrist": (0.38, 0.1), "l_wrist": (0.62, 0.1)}, "hands_raised"),
    ({"l_wrist": (0.35, 0.5), "r_wrist": (0.65, 0.5)}, "arms_crossed"),
    ({"r_wrist": (0.51, 0.21)}, "hands_on_face"),
])
def test_postures_raise_their_flag(moved, flag):
    attitude = classify_body_attitude(_skeleton(**moved)).model_dump()

    assert attitude[flag] is True
    assert [name for name in ("hands_raised", "arms_crossed", "hands_on_face") if attitude[name]] == [flag]


@pytest.mark.unit
def test_missing_mandatory_keypoint_gives_zero_confidence():
    keypoints = list(_skeleton().keypoints)
    keypoints[COCO_KEYPOINTS.index("l_elbow")] = ABSENT_KEYPOINT

    assert classify_body_attitude(Skeleton2D(keypoints=keypoints, timestamp=0.0)).confidence == 0.0


@pytest.mark.unit
def test_missing_left_wrist_lowers_confidence():
    keypoints = list(_skeleton(r_wrist=(0.38, 0.1)).keypoints)
    keypoints[COCO_KEYPOINTS.index("l_wrist")] = ABSENT_KEYPOINT

    attitude = classify_body_attitude(Skeleton2D(keypoints=keypoints, timestamp=0.0))

    assert attitude.confidence == pytest.approx(7.0 / 8.0)
    assert attitude.hands_raised and not attitude.arms_crossed

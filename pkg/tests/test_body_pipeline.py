import numpy as np
import pytest

from src.body_pipeline import BodyPipeline
from src.config_manager import Config
from src.hri_bus import HRIBus
from src.hri_kinematics import JointState, generate_model, keypoints_3d
from src.hri_model import COCO_INDEX
from src.hri_tf import Transform

BODY = "37ef0000"
URDF_TOPIC = f"/humans/bodies/{BODY}/urdf"


@pytest.fixture
def config():
    return Config()


@pytest.fixture
def pipeline(config):
    return BodyPipeline(HRIBus(config.bus), config.person_manager.sensor_frame, config.kinematics)


def _observation(height=1.75):
    root = Transform.from_axes((2.5, 0.3, 0.93), (-1.0, 0.0, 0.0), (0.0, 0.0, 1.0))
    return keypoints_3d(generate_model(BODY, height), JointState.zero(), root)


@pytest.mark.unit
def test_urdf_is_published_once_per_body(pipeline):
    subscription = pipeline.bus.subscribe(URDF_TOPIC)
    points = _observation()

    pipeline.process(BODY, 1.75, points, np.ones(18), 0.0)
    pipeline.process(BODY, 1.75, points, np.ones(18), 0.1)

    deliveries = subscription.drain()
    assert len(deliveries) == 1
    assert f"waist_{BODY}" in deliveries[0].message.data


@pytest.mark.unit
def test_segment_frames_hang_under_the_body_frame(pipeline):
    points = _observation()
    state = pipeline.process(BODY, 1.75, points, np.ones(18), 0.0)

    assert np.allclose(state.as_array(), 0.0, atol=1e-9)
    tf = pipeline.bus.tf
    assert tf.parent_of(f"body_{BODY}", 0.0) == "camera"
    assert tf.parent_of(f"l_wrist_{BODY}", 0.0) == f"body_{BODY}"
    wrist = tf.lookup("camera", f"l_wrist_{BODY}", 0.0).translation
    assert wrist == pytest.approx(points[COCO_INDEX["l_wrist"]], abs=1e-9)
    assert tf.lookup(f"body_{BODY}", f"waist_{BODY}", 0.0).is_close(Transform.identity())


@pytest.mark.unit
def test_missing_torso_points_skip_the_frame(pipeline):
    points = _observation()
    confidence = np.ones(18)
    confidence[COCO_INDEX["neck"]] = 0.0

    assert pipeline.process(BODY, 1.75, points, confidence, 0.0) is None
    assert pipeline.bus.last_value(URDF_TOPIC) is not None
    assert f"body_{BODY}" not in pipeline.bus.tf


@pytest.mark.unit
def test_models_are_cached_until_forgotten(pipeline):
    model = pipeline.model(BODY, 1.75)

    assert pipeline.model(BODY, 1.60) is model
    pipeline.forget(BODY)
    assert pipeline.model(BODY, 1.60).height == 1.60

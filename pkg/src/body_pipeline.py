"""Per-body kinematics publisher: URDF once, then root and segment frames each frame."""
from typing import Dict, Optional, Sequence

import numpy as np
import structlog

from .config_manager import KinematicsConfig
from .exceptions import EstimationError
from .hri_bus import HRIBus, entity_topic
from .hri_kinematics import (
    JointState,
    KinematicModel,
    emit_urdf,
    estimate_joint_state,
    forward_kinematics,
    generate_model,
)
from .hri_model import IdKind, String
from .hri_tf import frame_name

logger = structlog.get_logger()


class BodyPipeline:
    def __init__(self, bus: HRIBus, sensor_frame: str = "camera", config: Optional[KinematicsConfig] = None):
        self.bus = bus
        self.sensor_frame = sensor_frame
        self.config = config or KinematicsConfig()
        self._models: Dict[str, KinematicModel] = {}

    def model(self, body_id: str, height: float) -> KinematicModel:
        model = self._models.get(body_id)
        if model is None:
            model = generate_model(body_id, height, min_height=self.config.min_height,
                                   max_height=self.config.max_height)
            self._models[body_id] = model
        return model

    def process(self, body_id: str, height: float, keypoints: np.ndarray,
                confidence: Sequence[float], timestamp: float) -> Optional[JointState]:
        known = body_id in self._models
        model = self.model(body_id, height)
        if not known:
            self.bus.publish(entity_topic(IdKind.BODY, body_id, "urdf"), String(data=emit_urdf(model)), timestamp)
            logger.info("urdf_published", body_id=body_id, height=height)
        try:
            joint_state, root = estimate_joint_state(model, keypoints, confidence, timestamp)
        except EstimationError as exc:
            logger.warning("joint_state_unavailable", body_id=body_id, reason=str(exc))
            return None
        body_frame = frame_name("body", body_id)
        self.bus.publish_transform(self.sensor_frame, body_frame, root, timestamp)
        for child, pose in forward_kinematics(model, joint_state).items():
            self.bus.publish_transform(body_frame, child, pose, timestamp)
        return joint_state

    def forget(self, body_id: str) -> None:
        self._models.pop(body_id, None)

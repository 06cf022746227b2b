import os
import yaml
from pathlib import Path
from typing import Any, Dict, Optional
from pydantic import BaseModel, Field, field_validator
import structlog

logger = structlog.get_logger()

CONFIG_ENV_VAR = "HRI_CONFIG"
DEFAULT_CONFIG_FILE = "config.yaml"


class LoggingConfig(BaseModel):
    level: str = "INFO"
    log_to_file: bool = False
    log_directory: str = "./logs"
    max_log_size_mb: int = 100
    backup_count: int = 10
    structured_logging: bool = True


class BusConfig(BaseModel):
    tf_retention_seconds: float = 10.0


class KinematicsConfig(BaseModel):
    min_height: float = 0.5
    max_height: float = 2.5


class PersonManagerConfig(BaseModel):
    association_gate: float = 0.5
    face_body_distance_scale: float = 0.3
    voice_bearing_scale_deg: float = 30.0
    identity_threshold: float = 0.4
    gaze_cone_deg: float = 15.0
    group_radius: float = 1.5
    forget_after: float = 60.0
    head_width: float = 0.15
    voice_nominal_range: float = 1.5
    min_track_age: float = 0.0
    respect_eyes_closed: bool = True
    eyes_closed_au45_intensity: float = 2.5
    focal_length_px: float = 600.0
    image_width: int = 640
    image_height: int = 480
    sensor_frame: str = "camera"
    world_frame: str = "map"

    @field_validator("association_gate", "identity_threshold", "forget_after", "head_width",
                     "face_body_distance_scale", "voice_bearing_scale_deg", "focal_length_px")
    @classmethod
    def _positive(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @field_validator("min_track_age")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be non-negative")
        return value


class SimulatorConfig(BaseModel):
    position_sigma: float = 0.0
    facing_sigma_deg: float = 0.0
    descriptor_sigma: float = 0.0
    face_body_margin: float = 0.1


class Config(BaseModel):
    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    bus: BusConfig = Field(default_factory=BusConfig)
    kinematics: KinematicsConfig = Field(default_factory=KinematicsConfig)
    person_manager: PersonManagerConfig = Field(default_factory=PersonManagerConfig)
    simulator: SimulatorConfig = Field(default_factory=SimulatorConfig)

    def with_person_manager(self, overrides: Dict[str, Any]) -> "Config":
        if not overrides:
            return self
        merged = {**self.person_manager.model_dump(), **overrides}
        return self.model_copy(update={"person_manager": PersonManagerConfig(**merged)})

    def with_overrides(self, overrides: Dict[str, Any]) -> "Config":
        """Apply dotted ``section.key`` overrides and re-validate the whole config."""
        data = self.model_dump()
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if section not in data or key not in data[section]:
                raise KeyError(f"unknown config key {dotted!r}")
            data[section][key] = value
        return Config(**data)


class ConfigManager:
    _instance: Optional['ConfigManager'] = None
    _config: Optional[Config] = None
    _path: Optional[str] = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(ConfigManager, cls).__new__(cls)
        return cls._instance

    def __init__(self):
        if self._config is None:
            self.load_config()

    def load_config(self, config_path: Optional[str] = None) -> Config:
        if config_path is None:
            config_path = os.getenv(CONFIG_ENV_VAR, DEFAULT_CONFIG_FILE)

        config_file = Path(config_path)

        if config_file.exists():
            logger.debug("loading_config", path=str(config_file))
            with open(config_file, 'r', encoding="utf-8") as f:
                config_dict = yaml.safe_load(f) or {}

            self._config = Config(**config_dict)
        else:
            logger.debug("config_not_found", path=str(config_file), action="using_defaults")
            self._config = Config()

        ConfigManager._config = self._config
        ConfigManager._path = str(config_file)
        self._setup_environment()
        return self._config

    def _setup_environment(self):
        if self._config.logging.log_to_file:
            Path(self._config.logging.log_directory).mkdir(parents=True, exist_ok=True)

    @property
    def config(self) -> Config:
        if self._config is None:
            self.load_config()
        return self._config

    def get(self, key_path: str, default: Any = None) -> Any:
        keys = key_path.split('.')
        value = self._config

        try:
            for key in keys:
                if hasattr(value, key):
                    value = getattr(value, key)
                else:
                    return default
            return value
        except (AttributeError, KeyError):
            return default

    def reload(self):
        logger.debug("reloading_config")
        ConfigManager._config = None
        self._config = None
        self.load_config(self._path)


def get_config() -> Config:
    return ConfigManager().config


def load_config(config_path: Optional[str] = None) -> Config:
    return ConfigManager().load_config(config_path)

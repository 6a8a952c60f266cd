import os
from typing import Any, Dict, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from pddf.core.errors import ConfigError
from pddf.models.compose import ComposeParams
from pddf.models.extract import PointCloudConfig, VStarConfig
from pddf.models.field import SirenConfig
from pddf.models.render import Camera
from pddf.models.samples import DatasetSpec
from pddf.models.training import TrainConfig
from pddf.models.validation import ValidationConfig

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """
    Process-level settings for the PDDF toolkit.
    """
    model_config = SettingsConfigDict(env_prefix="PDDF_", case_sensitive=True)

    PROJECT_NAME: str = "pddf"

    # Logging
    LOG_LEVEL: str = os.getenv("PDDF_LOG_LEVEL", "INFO")
    LOG_FILE_PATH: Optional[str] = os.getenv("PDDF_LOG_FILE_PATH") or None
    METRICS_FILE_PATH: Optional[str] = os.getenv("PDDF_METRICS_FILE_PATH") or None

    # Compute
    THREADS: int = int(os.getenv("PDDF_THREADS", str(os.cpu_count() or 1)))
    DEFAULT_DTYPE: Literal["float32", "float64"] = os.getenv("PDDF_DEFAULT_DTYPE", "float32")
    RENDER_CHUNK: int = int(os.getenv("PDDF_RENDER_CHUNK", "65536"))
    DETERMINISTIC: bool = os.getenv("PDDF_DETERMINISTIC", "true").lower() in ("1", "true", "yes")


settings = Settings()


class PipelineConfig(BaseModel):
    """
    Plain-text pipeline configuration. Every section rejects unknown keys.
    """
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, description="Root seed for every random stream")
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    field: SirenConfig = Field(default_factory=SirenConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    camera: Camera = Field(default_factory=Camera)
    compose: ComposeParams = Field(default_factory=ComposeParams)
    vstar: VStarConfig = Field(default_factory=VStarConfig)
    point_cloud: PointCloudConfig = Field(default_factory=PointCloudConfig)
    validation: ValidationConfig = Field(default_factory=ValidationConfig)

    def resolved(self) -> "PipelineConfig":
        """
        Copy in which each section's seed is offset by the root seed, so a
        single --seed moves every random stream.
        """
        updates = {}
        for name in ("dataset", "field", "train", "vstar", "validation"):
            section = getattr(self, name)
            updates[name] = section.model_copy(update={"seed": self.seed + section.seed})
        return self.model_copy(update=updates)


def parse_pipeline_config(data: Dict[str, Any]) -> PipelineConfig:
    """
    Validate a raw mapping into a PipelineConfig. A ``[field]`` section
    without a dtype gets ``settings.DEFAULT_DTYPE``.

    Args:
        data: Parsed TOML content

    Returns:
        Validated configuration
    """
    field = data.get("field", {})
    if isinstance(field, dict) and "dtype" not in field:
        data = {**data, "field": {**field, "dtype": settings.DEFAULT_DTYPE}}
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_pipeline_config(path: Optional[str] = None, seed: Optional[int] = None) -> PipelineConfig:
    """
    Load a TOML pipeline configuration, falling back to defaults.

    Args:
        path: Optional path to a TOML file
        seed: Optional seed overriding the file's value

    Returns:
        Validated configuration
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except OSError as e:
            raise ConfigError(f"Cannot read configuration {path}: {e}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Malformed configuration {path}: {e}") from e

    config = parse_pipeline_config(data)
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    return config.resolved()

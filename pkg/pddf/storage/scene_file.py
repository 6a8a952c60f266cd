import json
from typing import List

from loguru import logger
from pydantic import ValidationError

from pddf.core.errors import ConfigError, StorageError
from pddf.models.compose import ScenePartSpec


def load_scene(path: str) -> List[ScenePartSpec]:
    """
    Read a scene file: a JSON list of parts, each naming a checkpoint or an
    analytic shape plus scale, rotation quaternion [w, x, y, z] and
    translation.

    Args:
        path: Scene file path

    Returns:
        Validated part descriptions
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        logger.error(f"Error reading scene {path}: {str(e)}")
        raise StorageError(f"Cannot read scene {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Malformed scene file {path}: {e}") from e

    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"Scene file {path} must hold a non-empty JSON list of parts")
    try:
        return [ScenePartSpec.model_validate(part) for part in raw]
    except ValidationError as e:
        raise ConfigError(f"Invalid scene part in {path}: {e}") from e


def write_scene(path: str, parts: List[ScenePartSpec]) -> None:
    payload = [part.model_dump(mode="json", exclude_none=True) for part in parts]
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
    except OSError as e:
        raise StorageError(f"Cannot write scene {path}: {e}") from e

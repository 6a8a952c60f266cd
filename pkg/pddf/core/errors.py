"""Exception hierarchy. Each class carries the CLI exit code it maps to."""
from typing import Any, Dict, Optional


class PddfError(Exception):
    exit_code = 1

    def __init__(self, message: str = "", details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details = details or {}


class ConfigError(PddfError):
    exit_code = 2


class GeometryError(PddfError):
    """Invalid geometric input: empty meshes, bad transforms, degenerate cameras."""

    exit_code = 2


class StorageError(PddfError):
    exit_code = 3


class DatasetFormatError(StorageError):
    pass


class CheckpointError(StorageError):
    pass


class ImageFormatError(StorageError):
    pass


class MeshFormatError(StorageError):
    pass


class NumericalError(PddfError):
    exit_code = 4


class ValidationFailed(PddfError):
    """A selected property check failed; details carry the reports."""

    exit_code = 1

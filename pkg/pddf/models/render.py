from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from pddf.models.geometry import Vec3


class Camera(BaseModel):
    """
    Pinhole camera. Defaults put the camera on +z at distance 3, looking at
    the origin.
    """
    model_config = ConfigDict(extra="forbid")

    position: Vec3 = (0.0, 0.0, 3.0)
    look_at: Vec3 = (0.0, 0.0, 0.0)
    up: Vec3 = (0.0, 1.0, 0.0)
    vertical_fov: float = Field(50.0, gt=0.0, lt=180.0, description="Degrees")
    width: int = Field(128, ge=1)
    height: int = Field(128, ge=1)
    xi_threshold: float = Field(0.5, ge=0.0, le=1.0, description="Visible-pixel threshold for derived maps")

    @model_validator(mode="after")
    def _distinct(self) -> "Camera":
        if np.allclose(self.position, self.look_at, rtol=0.0, atol=0.0):
            raise ValueError("camera position must differ from look_at")
        return self


@dataclass
class DepthVisibilityImages:
    """(H, W) depth with +inf where invisible, and (H, W) visibility."""
    depth: np.ndarray
    xi: np.ndarray


@dataclass
class NormalImage:
    """(H, W, 3) unit normals; NaN rows where undefined."""
    normals: np.ndarray
    valid: np.ndarray


@dataclass
class CurvatureImage:
    """(H, W, 2) of (mean, gaussian); NaN where undefined."""
    curvature: np.ndarray
    valid: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.curvature[..., 0]

    @property
    def gaussian(self) -> np.ndarray:
        return self.curvature[..., 1]


@dataclass
class RenderedImages:
    depth: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    curvature: Optional[np.ndarray] = None

from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from pddf.models.geometry import Vec3, quaternion_to_matrix


class ComposeParams(BaseModel):
    """Softmax temperature and inverse-depth floor for composition."""
    model_config = ConfigDict(extra="forbid")

    eta_t: float = Field(0.02, gt=0.0)
    epsilon_s: float = Field(0.01, gt=0.0)


class SimilarityTransform(BaseModel):
    """
    World-to-object similarity: p' = R^T (p - t) / s, v' = R^T v.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    scale: float = Field(1.0, gt=0.0)
    rotation: List[List[float]] = Field(default_factory=lambda: np.eye(3).tolist())
    translation: Vec3 = (0.0, 0.0, 0.0)

    @field_validator("rotation")
    @classmethod
    def _orthonormal(cls, rotation: List[List[float]]) -> List[List[float]]:
        r = np.asarray(rotation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(r.T @ r, np.eye(3), rtol=0.0, atol=1e-9):
            raise ValueError("rotation must be orthonormal")
        if np.linalg.det(r) <= 0.0:
            raise ValueError("rotation must have determinant +1")
        return r.tolist()

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=np.float64)

    @classmethod
    def from_quaternion(cls, q: List[float], scale: float = 1.0, translation: Vec3 = (0.0, 0.0, 0.0)) -> "SimilarityTransform":
        return cls(scale=scale, rotation=quaternion_to_matrix(q).tolist(), translation=translation)


class ScenePartSpec(BaseModel):
    """
    One entry of a scene file: a checkpoint or a built-in analytic shape,
    plus its placement.
    """
    model_config = ConfigDict(extra="forbid")

    checkpoint: Optional[str] = None
    analytic: Optional[str] = None
    scale: float = Field(1.0, gt=0.0)
    rotation: List[float] = Field(default_factory=lambda: [1.0, 0.0, 0.0, 0.0], description="Quaternion (w, x, y, z)")
    translation: Vec3 = (0.0, 0.0, 0.0)

    @field_validator("rotation")
    @classmethod
    def _quaternion(cls, q: List[float]) -> List[float]:
        if len(q) != 4 or float(np.linalg.norm(q)) == 0.0:
            raise ValueError("rotation must be a non-zero quaternion [w, x, y, z]")
        return q

    @model_validator(mode="after")
    def _one_source(self) -> "ScenePartSpec":
        if (self.checkpoint is None) == (self.analytic is None):
            raise ValueError("each part needs exactly one of 'checkpoint' or 'analytic'")
        return self

    def transform(self) -> SimilarityTransform:
        return SimilarityTransform.from_quaternion(self.rotation, self.scale, self.translation)

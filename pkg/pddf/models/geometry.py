from dataclasses import dataclass
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from pddf.core.errors import ConfigError

Vec3 = Tuple[float, float, float]


class OrientedPoint(BaseModel):
    """
    A field query: position plus view direction.
    """
    model_config = ConfigDict(frozen=True)

    p: Vec3 = Field(..., description="Position in the bounding volume")
    v: Vec3 = Field(..., description="View direction (unit)")

    @field_validator("v")
    @classmethod
    def _unit(cls, v: Vec3) -> Vec3:
        norm = float(np.linalg.norm(v))
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("view direction must be non-zero and finite")
        return tuple(float(c) / norm for c in v)


class BoundingBox(BaseModel):
    """
    Axis-aligned field domain, [-1, 1]^3 by default.
    """
    model_config = ConfigDict(frozen=True)

    min: Vec3 = (-1.0, -1.0, -1.0)
    max: Vec3 = (1.0, 1.0, 1.0)

    @model_validator(mode="after")
    def _ordered(self) -> "BoundingBox":
        if not all(lo < hi for lo, hi in zip(self.min, self.max)):
            raise ValueError(f"box min {self.min} must be below max {self.max} componentwise")
        return self

    def contains(self, p: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.min), np.asarray(self.max)
        return np.all((p >= lo) & (p <= hi), axis=-1)


DEFAULT_BOX = BoundingBox()


class SphereShape(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["sphere"] = "sphere"
    center: Vec3 = (0.0, 0.0, 0.0)
    radius: float = Field(1.0, gt=0.0)


class PlaneShape(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["plane"] = "plane"
    point: Vec3 = (0.0, 0.0, 0.0)
    normal: Vec3 = (0.0, 0.0, 1.0)

    @field_validator("normal")
    @classmethod
    def _unit(cls, n: Vec3) -> Vec3:
        norm = float(np.linalg.norm(n))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"plane normal must be unit, got norm {norm}")
        return n


class BoxShape(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["box"] = "box"
    min: Vec3 = (-0.5, -0.5, -0.5)
    max: Vec3 = (0.5, 0.5, 0.5)

    @model_validator(mode="after")
    def _ordered(self) -> "BoxShape":
        if not all(lo < hi for lo, hi in zip(self.min, self.max)):
            raise ValueError("box shape min must be below max componentwise")
        return self


AnalyticShape = Annotated[Union[SphereShape, PlaneShape, BoxShape], Field(discriminator="kind")]


def _parse_vec(text: str) -> Vec3:
    parts = [float(c) for c in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated numbers, got '{text}'")
    return (parts[0], parts[1], parts[2])


def parse_analytic(spec: str) -> Union[SphereShape, PlaneShape, BoxShape]:
    """
    Parse the built-in shape grammar used by the CLI and scene files.

    Forms: "sphere:<r>[:<cx>,<cy>,<cz>]", "box:<half>[:<cx>,<cy>,<cz>]",
    "plane[:<nx>,<ny>,<nz>[:<px>,<py>,<pz>]]".

    Args:
        spec: Shape description, without the "analytic:" prefix

    Returns:
        The analytic shape
    """
    fields = spec.split(":")
    name = fields[0]
    try:
        if name == "sphere":
            radius = float(fields[1]) if len(fields) > 1 else 1.0
            center = _parse_vec(fields[2]) if len(fields) > 2 else (0.0, 0.0, 0.0)
            return SphereShape(center=center, radius=radius)
        if name == "box":
            half = float(fields[1]) if len(fields) > 1 else 0.5
            c = np.asarray(_parse_vec(fields[2]) if len(fields) > 2 else (0.0, 0.0, 0.0))
            return BoxShape(min=tuple(c - half), max=tuple(c + half))
        if name == "plane":
            normal = np.asarray(_parse_vec(fields[1]) if len(fields) > 1 else (0.0, 0.0, 1.0))
            point = _parse_vec(fields[2]) if len(fields) > 2 else (0.0, 0.0, 0.0)
            return PlaneShape(point=point, normal=tuple(normal / np.linalg.norm(normal)))
    except (ValueError, IndexError) as e:
        raise ConfigError(f"Invalid analytic shape '{spec}': {e}") from e
    raise ConfigError(f"Unknown analytic shape '{name}'")


class HitRecord(BaseModel):
    """
    Ground-truth ray query result. Depth and normal are None when not visible.
    """
    visible: bool
    depth: Optional[float] = None
    normal: Optional[Vec3] = None
    triangle_index: Optional[int] = None


@dataclass
class HitBatch:
    """
    Batched ground truth: arrays of length N. Invisible rows hold depth 0,
    a zero normal and triangle index -1.
    """
    visible: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    triangle_index: np.ndarray

    def __len__(self) -> int:
        return int(self.visible.shape[0])

    def record(self, i: int) -> HitRecord:
        if not bool(self.visible[i]):
            return HitRecord(visible=False)
        tri = int(self.triangle_index[i])
        return HitRecord(
            visible=True,
            depth=float(self.depth[i]),
            normal=tuple(float(c) for c in self.normal[i]),
            triangle_index=tri if tri >= 0 else None,
        )


def quaternion_to_matrix(q: List[float]) -> np.ndarray:
    """
    Rotation matrix of a (w, x, y, z) quaternion, normalised first.
    """
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass
class TriangleMesh:
    """
    Indexed triangle mesh with per-triangle unit normals, areas and edge
    vectors. Zero-area triangles carry a zero normal.
    """
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self) -> None:
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        v0 = self.vertices[self.triangles[:, 0]]
        self.v0 = v0
        self.e1 = self.vertices[self.triangles[:, 1]] - v0
        self.e2 = self.vertices[self.triangles[:, 2]] - v0
        cross = np.cross(self.e1, self.e2)
        length = np.linalg.norm(cross, axis=1)
        self.areas = 0.5 * length
        self.normals = np.zeros_like(cross)
        nonzero = length > 0.0
        self.normals[nonzero] = cross[nonzero] / length[nonzero, None]

    def __len__(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    def normalized(self) -> "TriangleMesh":
        """
        Copy centred on its bounding-box centre with longest side 2.
        """
        if len(self.vertices) == 0:
            return self
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        extent = float((hi - lo).max())
        if extent == 0.0:
            return TriangleMesh(self.vertices - (lo + hi) / 2.0, self.triangles)
        return TriangleMesh((self.vertices - (lo + hi) / 2.0) * (2.0 / extent), self.triangles)

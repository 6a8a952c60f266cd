from dataclasses import dataclass
from typing import List, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from pddf.models.compose import ComposeParams


class VStarConfig(BaseModel):
    """
    Closest-direction field fitting.
    """
    model_config = ConfigDict(extra="forbid")

    hidden_sizes: List[int] = Field(default_factory=lambda: [128] * 5)
    omega_0: float = Field(1.0, gt=0.0)
    candidates: int = Field(5, ge=1, description="Candidate directions per position")
    tau_n: float = Field(5e-3, ge=0.0, description="Candidate spread weight")
    tau_d: float = Field(0.1, ge=0.0, description="Normal alignment weight")
    iterations: int = Field(10_000, ge=0)
    lr: float = Field(1e-4, gt=0.0)
    points_per_step: int = Field(4096, ge=1)
    compose: ComposeParams = Field(default_factory=ComposeParams)
    seed: int = 0


class PointCloudConfig(BaseModel):
    """Explicit point sampling from a field."""
    model_config = ConfigDict(extra="forbid")

    n_points: int = Field(2048, ge=1)
    n_directions: int = Field(128, ge=1)
    hops: int = Field(3, ge=1)
    oversample: float = Field(0.1, ge=0.0)
    compose: ComposeParams = Field(default_factory=ComposeParams)
    chunk: int = Field(256, ge=1, description="Positions evaluated per batch")


@dataclass
class UdfResult:
    """Unsigned distance, closest direction and a per-point confidence flag."""
    udf: np.ndarray
    v_star: np.ndarray
    confident: np.ndarray


@dataclass
class PointCloud:
    points: np.ndarray
    xi: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])


class ChamferScores(NamedTuple):
    """Chamfer distance (x1000) and F-scores (x100) at tau and 2 tau."""
    chamfer: float
    f_score: float
    f_score_2tau: float

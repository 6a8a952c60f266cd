from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field

from pddf.models.samples import SampleType


class LossWeights(BaseModel):
    """
    Loss term weights. The eikonal weights live inside the directed eikonal
    term; the others scale whole terms.
    """
    model_config = ConfigDict(extra="forbid")

    gamma_d: float = Field(5.0, ge=0.0)
    gamma_xi: float = Field(1.0, ge=0.0)
    gamma_n: float = Field(10.0, ge=0.0)
    gamma_v: float = Field(1.0, ge=0.0)
    gamma_e_d: float = Field(0.05, ge=0.0)
    gamma_e_xi: float = Field(0.01, ge=0.0)
    gamma_t: float = Field(0.25, ge=0.0)
    epsilon_t: float = Field(2.0, ge=0.0, description="Target weight-transition speed")
    gamma_v_xi: float = Field(0.0, ge=0.0, description="Visibility variance weight, off by default")


class BatchCounts(BaseModel):
    """Samples drawn per type for each minibatch."""
    model_config = ConfigDict(extra="forbid")

    A: int = Field(6000, ge=0)
    U: int = Field(6000, ge=0)
    B: int = Field(3000, ge=0)
    T: int = Field(3000, ge=0)
    O: int = Field(3000, ge=0)
    S: int = Field(3000, ge=0)
    reg_only: int = Field(1000, ge=0)

    def for_type(self, kind: SampleType) -> int:
        return int(getattr(self, kind.value))

    def scaled(self, factor: float) -> "BatchCounts":
        return BatchCounts(**{k: int(round(v * factor)) for k, v in self.model_dump().items()})


class TrainConfig(BaseModel):
    """
    Optimisation recipe for a single shape.
    """
    model_config = ConfigDict(extra="forbid")

    iterations: int = Field(100_000, ge=0)
    lr: float = Field(1e-4, gt=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    plateau_factor: float = Field(0.9, gt=0.0, lt=1.0)
    plateau_min_gap: int = Field(5000, ge=0, description="Minimum iterations between reductions")
    plateau_patience: int = Field(2000, ge=0, description="Iterations without a new EMA minimum")
    ema_alpha: float = Field(0.01, gt=0.0, le=1.0)
    batch: BatchCounts = Field(default_factory=BatchCounts)
    weights: LossWeights = Field(default_factory=LossWeights)
    seed: int = 0
    scale: float = Field(1.0, gt=0.0, description="Uniform factor on batch counts and iterations")
    report_every: int = Field(100, ge=1)
    checkpoint_fraction: float = Field(0.1, gt=0.0, le=1.0)

    @property
    def scaled_iterations(self) -> int:
        return int(round(self.iterations * self.scale))

    @property
    def scaled_batch(self) -> BatchCounts:
        return self.batch.scaled(self.scale)


@dataclass
class LossBreakdown:
    """
    Per-term losses. Each entry is a scalar tensor, differentiable when the
    inputs were.
    """
    depth: torch.Tensor
    depth_au: torch.Tensor
    visibility: torch.Tensor
    normals: torch.Tensor
    directed_eikonal: torch.Tensor
    variance: torch.Tensor
    transition: torch.Tensor
    xi_variance: torch.Tensor
    total: torch.Tensor

    def as_dict(self) -> Dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


@dataclass
class TrainReport:
    """History of reported losses plus held-out metrics."""
    history: List[Dict[str, float]] = field(default_factory=list)
    held_out: Dict[str, Dict[str, float]] = field(default_factory=dict)
    iterations: int = 0
    final_lr: Optional[float] = None
    lr_reductions: List[int] = field(default_factory=list)

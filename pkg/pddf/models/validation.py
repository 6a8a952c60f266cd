from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, Field


class ValidationConfig(BaseModel):
    """
    Sample counts and pass tolerances for the property checks.
    """
    model_config = ConfigDict(extra="forbid")

    n_samples: int = Field(1000, ge=1)
    xi_threshold: float = Field(0.5, ge=0.0, le=1.0)
    silhouette_cos: float = Field(0.05, ge=0.0, lt=1.0, description="Exclude |n.v| below this")
    eikonal_tol: float = Field(0.1, ge=0.0, description="Mean residual bound")
    gradnorm_margin: float = Field(0.05, ge=0.0)
    gradnorm_max_fraction: float = Field(0.05, ge=0.0, le=1.0)
    consistency_tol: float = Field(0.1, ge=0.0, description="Median relative residual bound")
    view_slack: float = Field(0.02, ge=0.0)
    view_max_fraction: float = Field(0.05, ge=0.0, le=1.0)
    view_secondary: int = Field(4, ge=1, description="Secondary viewpoints per visible sample")
    seed: int = 0


class PropertyReport(BaseModel):
    """
    Result of one property check.
    """
    name: str = Field(..., description="Property name")
    sample_count: int = Field(..., ge=0)
    mean: float = Field(..., ge=0.0)
    median: float = Field(..., ge=0.0)
    p95: float = Field(..., ge=0.0)
    passed: bool
    tolerance: float
    violation_fraction: Optional[float] = None
    extra: Dict[str, float] = Field(default_factory=dict)
    notes: str = ""

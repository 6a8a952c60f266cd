from dataclasses import dataclass
from typing import List, Literal, Optional

import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator


class SirenConfig(BaseModel):
    """
    Architecture of the sinusoidal field network.
    """
    model_config = ConfigDict(extra="forbid")

    input_dim: Literal[6] = Field(6, description="Concatenated (p, v)")
    hidden_sizes: List[int] = Field(default_factory=lambda: [512] * 7, description="Hidden layer widths")
    omega_0: float = Field(1.0, gt=0.0, description="Sine frequency factor")
    K: Literal[2] = Field(2, description="Number of depth mixture components")
    seed: int = Field(0, description="Initialisation seed")
    dtype: Literal["float32", "float64"] = Field("float32", description="Parameter dtype")

    @field_validator("hidden_sizes")
    @classmethod
    def _non_empty(cls, sizes: List[int]) -> List[int]:
        if not sizes or any(s <= 0 for s in sizes):
            raise ValueError("hidden_sizes must be a non-empty list of positive widths")
        return sizes

    @property
    def output_dim(self) -> int:
        return 2 * self.K + 1

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass
class FieldOutput:
    """
    Batched field values. Shapes: d (N, 2), w1 (N,), xi (N,).
    """
    d: torch.Tensor
    w1: torch.Tensor
    xi: torch.Tensor

    @property
    def i_star(self) -> torch.Tensor:
        # w1 == 0.5 picks component 0
        return (self.w1 < 0.5).long()

    @property
    def depth(self) -> torch.Tensor:
        return self.d.gather(1, self.i_star[:, None])[:, 0]

    @property
    def weights(self) -> torch.Tensor:
        return torch.stack([self.w1, 1.0 - self.w1], dim=-1)

    def __len__(self) -> int:
        return int(self.d.shape[0])

    def detach(self) -> "FieldOutput":
        return FieldOutput(d=self.d.detach(), w1=self.w1.detach(), xi=self.xi.detach())


@dataclass
class FieldJet:
    """
    Field values plus input derivatives.

    grad_p_d is (N, 2, 3), grad_p_w1 and grad_p_xi are (N, 3). When view
    tangents were requested, grad_v_d holds (N, 2, M) directional derivatives
    of both depths along them. When second pairs were requested,
    second_dirs holds (N, P) values t_b^T H_p[d_{i*}] t_a.
    """
    output: FieldOutput
    grad_p_d: torch.Tensor
    grad_p_w1: torch.Tensor
    grad_p_xi: torch.Tensor
    grad_v_d: Optional[torch.Tensor] = None
    second_dirs: Optional[torch.Tensor] = None

    @property
    def grad_p_depth(self) -> torch.Tensor:
        """Position gradient of the selected depth d_{i*}, (N, 3)."""
        idx = self.output.i_star[:, None, None].expand(-1, 1, 3)
        return self.grad_p_d.gather(1, idx)[:, 0]

    @property
    def grad_v_depth(self) -> Optional[torch.Tensor]:
        if self.grad_v_d is None:
            return None
        m = self.grad_v_d.shape[-1]
        idx = self.output.i_star[:, None, None].expand(-1, 1, m)
        return self.grad_v_d.gather(1, idx)[:, 0]

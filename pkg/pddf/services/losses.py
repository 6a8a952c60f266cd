from dataclasses import dataclass

import numpy as np
import torch

from pddf.core.errors import DatasetFormatError
from pddf.models.field import FieldJet
from pddf.models.samples import REG_ONLY_CODE, SampleSet, SampleType
from pddf.models.training import LossBreakdown, LossWeights
from pddf.services.field import DEGENERATE_GRADIENT, PddfNetwork

BCE_EPSILON = 1e-7

_UAB = (SampleType.U.code, SampleType.A.code, SampleType.B.code)
_AU = (SampleType.A.code, SampleType.U.code)


@dataclass
class TensorBatch:
    """
    Minibatch on the torch side. Regularisation-only rows carry kind
    REG_ONLY_CODE and no ground truth.
    """
    p: torch.Tensor
    v: torch.Tensor
    kind: torch.Tensor
    visible: torch.Tensor
    depth: torch.Tensor
    normal: torch.Tensor

    def __len__(self) -> int:
        return int(self.p.shape[0])

    @classmethod
    def from_samples(cls, samples: SampleSet, dtype: torch.dtype = torch.float32) -> "TensorBatch":
        return cls(
            p=torch.as_tensor(np.asarray(samples.p), dtype=dtype),
            v=torch.as_tensor(np.asarray(samples.v), dtype=dtype),
            kind=torch.as_tensor(samples.kind.astype(np.int64)),
            visible=torch.as_tensor(samples.visible.astype(np.int64)).bool(),
            depth=torch.as_tensor(np.asarray(samples.depth), dtype=dtype),
            normal=torch.as_tensor(np.asarray(samples.normal), dtype=dtype),
        )

    @classmethod
    def regularization_only(cls, p: torch.Tensor, v: torch.Tensor) -> "TensorBatch":
        n = p.shape[0]
        return cls(
            p=p,
            v=v,
            kind=torch.full((n,), REG_ONLY_CODE, dtype=torch.int64),
            visible=torch.zeros(n, dtype=torch.bool),
            depth=torch.zeros(n, dtype=p.dtype),
            normal=torch.zeros(n, 3, dtype=p.dtype),
        )

    def take(self, index: torch.Tensor) -> "TensorBatch":
        return TensorBatch(
            p=self.p[index],
            v=self.v[index],
            kind=self.kind[index],
            visible=self.visible[index],
            depth=self.depth[index],
            normal=self.normal[index],
        )

    @classmethod
    def concatenate(cls, parts) -> "TensorBatch":
        return cls(*(torch.cat([getattr(b, name) for b in parts]) for name in ("p", "v", "kind", "visible", "depth", "normal")))


def _isin(kind: torch.Tensor, codes) -> torch.Tensor:
    mask = torch.zeros_like(kind, dtype=torch.bool)
    for c in codes:
        mask |= kind == c
    return mask


def _masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean over the active rows; 0 when none are active."""
    count = mask.sum()
    if int(count) == 0:
        return values.sum() * 0.0
    return (values * mask.to(values.dtype)).sum() / count.to(values.dtype)


def total_loss(breakdown: LossBreakdown, weights: LossWeights) -> torch.Tensor:
    """
    Weighted sum of the loss terms. The eikonal weights are already inside
    the directed eikonal term.
    """
    return (
        weights.gamma_d * (breakdown.depth + breakdown.depth_au)
        + weights.gamma_xi * breakdown.visibility
        + weights.gamma_n * breakdown.normals
        + breakdown.directed_eikonal
        + weights.gamma_v * breakdown.variance
        + weights.gamma_t * breakdown.transition
        + weights.gamma_v_xi * breakdown.xi_variance
    )


def loss_terms_from_jet(jet: FieldJet, batch: TensorBatch, weights: LossWeights) -> LossBreakdown:
    """
    Every training term from a field jet over a labelled batch.

    Each term is averaged over the rows it applies to:

    - depth: visible rows; depth_au repeats it over visible A/U rows, which
      doubles their depth weight in the total
    - visibility: every row with ground truth
    - normals, directed eikonal depth part, variance: U/A/B rows (visible
      rows for the first two); the eikonal visibility part and the variance
      also cover regularisation-only rows
    - transition: S rows and visible T rows
    - xi_variance: every row

    Args:
        jet: Field outputs and position gradients for the batch rows
        batch: Labelled rows
        weights: Term weights

    Returns:
        Loss breakdown with a differentiable total
    """
    out = jet.output
    kind = batch.kind
    truth = kind != REG_ONLY_CODE
    visible = batch.visible & truth
    uab = _isin(kind, _UAB)
    reg = kind == REG_ONLY_CODE

    needs_normal = visible & (uab | (kind == SampleType.S.code) | (kind == SampleType.T.code))
    if bool((needs_normal & (batch.normal.norm(dim=-1) == 0)).any()):
        raise DatasetFormatError("Visible sample without a surface normal")

    # depth
    sq_err = (out.depth - batch.depth) ** 2
    depth = _masked_mean(sq_err, visible)
    depth_au = _masked_mean(sq_err, visible & _isin(kind, _AU))

    # visibility
    xi_hat = out.xi.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
    target = batch.visible.to(xi_hat.dtype)
    bce = -(target * torch.log(xi_hat) + (1.0 - target) * torch.log(1.0 - xi_hat))
    visibility = _masked_mean(bce, truth)

    # normals
    grad_d = jet.grad_p_depth
    grad_norm = grad_d.norm(dim=-1)
    regular = (grad_norm >= DEGENERATE_GRADIENT).to(grad_d.dtype)
    n_hat = grad_d / grad_norm.clamp_min(DEGENERATE_GRADIENT)[:, None]
    align = -(batch.normal * n_hat).sum(-1).abs() * regular
    normals = _masked_mean(align, visible & uab)

    # directed eikonal, on both depth components
    v_hat = batch.v / batch.v.norm(dim=-1, keepdim=True)
    along_d = (jet.grad_p_d * v_hat[:, None, :]).sum(-1)
    eik_d = ((along_d + 1.0) ** 2).sum(-1)
    eik_xi = (jet.grad_p_xi * v_hat).sum(-1) ** 2
    directed_eikonal = (
        weights.gamma_e_d * _masked_mean(eik_d, visible & uab)
        + weights.gamma_e_xi * _masked_mean(eik_xi, uab | reg)
    )

    # weight variance
    variance = _masked_mean(out.w1 * (1.0 - out.w1), uab | reg)

    # weight transition
    transition_rows = visible & ((kind == SampleType.S.code) | (kind == SampleType.T.code))
    speed = (jet.grad_p_w1 * batch.normal).sum(-1).abs()
    transition = _masked_mean(torch.relu(weights.epsilon_t - speed) ** 2, transition_rows)

    xi_variance = (out.xi * (1.0 - out.xi)).mean() if len(batch) else out.xi.sum() * 0.0

    breakdown = LossBreakdown(
        depth=depth,
        depth_au=depth_au,
        visibility=visibility,
        normals=normals,
        directed_eikonal=directed_eikonal,
        variance=variance,
        transition=transition,
        xi_variance=xi_variance,
        total=depth * 0.0,
    )
    breakdown.total = total_loss(breakdown, weights)
    return breakdown


def loss_terms(
    model: PddfNetwork,
    batch: TensorBatch,
    weights: LossWeights,
) -> LossBreakdown:
    """
    Run the field's jet on a batch and assemble the loss terms.

    Args:
        model: Field network
        batch: Labelled rows plus optional regularisation-only rows
        weights: Term weights

    Returns:
        Loss breakdown, differentiable with respect to the parameters
    """
    jet = model.jet(batch.p, batch.v)
    return loss_terms_from_jet(jet, batch, weights)

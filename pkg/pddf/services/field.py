from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from loguru import logger
from torch import nn

from pddf.core.errors import NumericalError
from pddf.models.field import FieldJet, FieldOutput, SirenConfig

DEGENERATE_GRADIENT = 1e-8

# Upper-triangular index pairs of a 3x3 Hessian
_HESSIAN_PAIRS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


class SirenNetwork(nn.Module):
    """
    Sinusoidal MLP: sin(omega_0 (W x + b)) on hidden layers, linear head.

    Besides the plain forward pass, ``propagate`` pushes directional input
    tangents (and their pairwise second derivatives) through the network
    alongside the values, using only differentiable torch ops, so parameter
    gradients of anything built from the tangents come from autograd.
    """

    def __init__(
        self,
        in_features: int,
        hidden_sizes: List[int],
        out_features: int,
        omega_0: float = 1.0,
        generator: Optional[torch.Generator] = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.omega_0 = omega_0
        sizes = [in_features] + list(hidden_sizes) + [out_features]
        self.layers = nn.ModuleList(
            nn.Linear(a, b, dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:])
        )
        self.init_weights(generator)

    def init_weights(self, generator: Optional[torch.Generator] = None) -> None:
        with torch.no_grad():
            for i, layer in enumerate(self.layers):
                fan_in = layer.in_features
                if i == 0:
                    bound = 1.0 / fan_in
                else:
                    bound = np.sqrt(6.0 / fan_in) / self.omega_0
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.uniform_(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), generator=generator)

    @property
    def hidden(self) -> nn.ModuleList:
        return self.layers[:-1]

    @property
    def head(self) -> nn.Linear:
        return self.layers[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.hidden:
            x = torch.sin(self.omega_0 * layer(x))
        return self.head(x)

    def propagate(
        self,
        x: torch.Tensor,
        tangents: torch.Tensor,
        pairs: Optional[Tuple[torch.Tensor, torch.Tensor]] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor, Optional[torch.Tensor]]:
        """
        Forward pass with first and second directional derivatives.

        Args:
            x: (N, in) inputs
            tangents: (N, T, in) input-space directions
            pairs: Optional (a, b) index tensors of length P into the T
                tangents; the second derivative along (a_k, b_k) is returned

        Returns:
            (out (N, out), out_t (N, T, out), out_h (N, P, out) or None)
        """
        w = self.omega_0
        x_t = tangents
        x_h = None
        if pairs is not None:
            a, b = pairs
            x_h = torch.zeros(x.shape[0], len(a), x.shape[1], dtype=x.dtype, device=x.device)

        for layer in self.hidden:
            u = w * layer(x)
            u_t = w * F.linear(x_t, layer.weight)
            s, c = torch.sin(u), torch.cos(u)
            if x_h is not None:
                u_h = w * F.linear(x_h, layer.weight)
                x_h = -s[:, None, :] * u_t[:, a, :] * u_t[:, b, :] + c[:, None, :] * u_h
            x_t = c[:, None, :] * u_t
            x = s

        head = self.head
        out = head(x)
        out_t = F.linear(x_t, head.weight)
        out_h = F.linear(x_h, head.weight) if x_h is not None else None
        return out, out_t, out_h


def _output_map(o: torch.Tensor) -> FieldOutput:
    return FieldOutput(
        d=torch.relu(o[:, :2]),
        w1=torch.sigmoid(o[:, 2] - o[:, 3]),
        xi=torch.sigmoid(o[:, 4]),
    )


class PddfNetwork(nn.Module):
    """
    Probabilistic directed distance field with a two-component depth mixture.

    The 5-wide head is (d1, d2, l1, l2, xi-logit): depths are rectified,
    w1 = sigmoid(l1 - l2), and visibility is a sigmoid.
    """

    def __init__(self, config: SirenConfig):
        super().__init__()
        self.config = config
        generator = torch.Generator().manual_seed(config.seed)
        self.siren = SirenNetwork(
            config.input_dim,
            config.hidden_sizes,
            config.output_dim,
            omega_0=config.omega_0,
            generator=generator,
            dtype=config.torch_dtype,
        )

    @property
    def dtype(self) -> torch.dtype:
        return self.config.torch_dtype

    def forward(self, p: torch.Tensor, v: torch.Tensor) -> FieldOutput:
        v = v / v.norm(dim=-1, keepdim=True)
        return _output_map(self.siren(torch.cat([p, v], dim=-1)))

    def jet(
        self,
        p: torch.Tensor,
        v: torch.Tensor,
        v_tangents: Optional[torch.Tensor] = None,
        second_pairs: Optional[Tuple[torch.Tensor, torch.Tensor]] = None,
    ) -> FieldJet:
        """
        Field values with exact input derivatives by tangent propagation.

        Args:
            p: (N, 3) positions
            v: (N, 3) view directions
            v_tangents: Optional (N, M, 3) view perturbations; only their
                component orthogonal to v has an effect
            second_pairs: Optional (t_a, t_b), each (N, P, 3), for the second
                directional derivatives t_b^T H_p[d_{i*}] t_a

        Returns:
            FieldJet, differentiable with respect to the parameters
        """
        n = p.shape[0]
        dtype, device = p.dtype, p.device
        v_norm = v.norm(dim=-1, keepdim=True)
        v_hat = v / v_norm
        x = torch.cat([p, v_hat], dim=-1)

        eye = torch.eye(3, dtype=dtype, device=device).expand(n, 3, 3)
        tangents = [torch.cat([eye, torch.zeros_like(eye)], dim=-1)]
        m = 0
        if v_tangents is not None:
            m = v_tangents.shape[1]
            proj = v_tangents - (v_tangents * v_hat[:, None, :]).sum(-1, keepdim=True) * v_hat[:, None, :]
            proj = proj / v_norm[:, None, :]
            tangents.append(torch.cat([torch.zeros_like(proj), proj], dim=-1))
        tangents = torch.cat(tangents, dim=1)

        pairs = None
        if second_pairs is not None:
            idx = torch.tensor(_HESSIAN_PAIRS, device=device)
            pairs = (idx[:, 0], idx[:, 1])

        o, o_t, o_h = self.siren.propagate(x, tangents, pairs)
        output = _output_map(o)

        active = (o[:, :2] > 0).to(dtype)
        d_t = o_t[:, :, :2] * active[:, None, :]
        w1, xi = output.w1, output.xi
        w1_t = (w1 * (1.0 - w1))[:, None] * (o_t[:, :, 2] - o_t[:, :, 3])
        xi_t = (xi * (1.0 - xi))[:, None] * o_t[:, :, 4]

        jet = FieldJet(
            output=output,
            grad_p_d=d_t[:, :3, :].transpose(1, 2),
            grad_p_w1=w1_t[:, :3],
            grad_p_xi=xi_t[:, :3],
        )
        if v_tangents is not None:
            jet.grad_v_d = d_t[:, 3:3 + m, :].transpose(1, 2)
        if second_pairs is not None:
            i_star = output.i_star
            h_sel = o_h[:, :, :2].gather(2, i_star[:, None, None].expand(-1, o_h.shape[1], 1))[:, :, 0]
            h_sel = h_sel * active.gather(1, i_star[:, None])
            hess = torch.zeros(n, 3, 3, dtype=dtype, device=device)
            for k, (i, j) in enumerate(_HESSIAN_PAIRS):
                hess[:, i, j] = h_sel[:, k]
                hess[:, j, i] = h_sel[:, k]
            t_a, t_b = second_pairs
            jet.second_dirs = torch.einsum("npi,nij,npj->np", t_b, hess, t_a)
        return jet


def init_siren(config: SirenConfig) -> PddfNetwork:
    """
    Build a field network with deterministic SIREN initialisation.

    Args:
        config: Architecture and seed

    Returns:
        Initialised network
    """
    model = PddfNetwork(config)
    n_params = sum(p.numel() for p in model.parameters())
    logger.debug(f"Initialised field network {config.hidden_sizes} ({n_params} parameters, seed {config.seed})")
    return model


def _check_finite(p: torch.Tensor, v: torch.Tensor) -> None:
    if not (torch.isfinite(p).all() and torch.isfinite(v).all()):
        raise NumericalError("Non-finite oriented point passed to the field")


def field_eval(model: PddfNetwork, p: torch.Tensor, v: torch.Tensor) -> FieldOutput:
    _check_finite(p, v)
    return model(p, v)


def field_eval_jet(
    model: PddfNetwork,
    p: torch.Tensor,
    v: torch.Tensor,
    v_tangents: Optional[torch.Tensor] = None,
    second_pairs: Optional[Tuple[torch.Tensor, torch.Tensor]] = None,
) -> FieldJet:
    _check_finite(p, v)
    return model.jet(p, v, v_tangents=v_tangents, second_pairs=second_pairs)


def surface_normal_estimate(grad_p_d: torch.Tensor, v: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Unit normals from depth gradients, oriented so that n.v < 0.

    Args:
        grad_p_d: (N, 3) position gradient of the selected depth
        v: (N, 3) view directions

    Returns:
        (normals, valid); rows with a gradient shorter than 1e-8 are NaN
        and marked invalid
    """
    norm = grad_p_d.norm(dim=-1)
    valid = norm >= DEGENERATE_GRADIENT
    n = grad_p_d / norm.clamp_min(DEGENERATE_GRADIENT)[:, None]
    flip = (n * v).sum(-1) > 0
    n = torch.where(flip[:, None], -n, n)
    n = torch.where(valid[:, None], n, torch.full_like(n, float("nan")))
    return n, valid


def curvature_at(
    second_dirs: torch.Tensor,
    n: torch.Tensor,
    v: torch.Tensor,
    valid: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Mean and Gaussian curvature from second directional depth derivatives.

    Args:
        second_dirs: (N, 4) values for the tangent pairs
            (t_x, t_x), (t_x, t_y), (t_y, t_x), (t_y, t_y)
        n: (N, 3) unit normals
        v: (N, 3) unit view directions
        valid: Optional mask; invalid rows come back NaN

    Returns:
        (C_H, C_K), each (N,)
    """
    cos = (n * v).sum(-1).abs()
    shape = second_dirs * cos[:, None]
    c_h = shape[:, 0] + shape[:, 3]
    c_k = shape[:, 0] * shape[:, 3] - shape[:, 1] * shape[:, 2]
    if valid is not None:
        nan = torch.full_like(c_h, float("nan"))
        c_h = torch.where(valid, c_h, nan)
        c_k = torch.where(valid, c_k, nan)
    return c_h, c_k


def curvature_pairs(t_x: torch.Tensor, t_y: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """(t_a, t_b) stacks for the four tangent pairs used by curvature_at."""
    t_a = torch.stack([t_x, t_y, t_x, t_y], dim=1)
    t_b = torch.stack([t_x, t_x, t_y, t_y], dim=1)
    return t_a, t_b

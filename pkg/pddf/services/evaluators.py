import threading
from typing import Callable, Optional, Protocol, Tuple, runtime_checkable

import torch

from pddf.models.field import FieldJet, FieldOutput
from pddf.services.field import PddfNetwork, field_eval, field_eval_jet
from pddf.services.geometry import Shape, analytic_hits

SecondPairs = Tuple[torch.Tensor, torch.Tensor]


@runtime_checkable
class FieldEvaluator(Protocol):
    """
    Anything that answers batched oriented-point queries: learned fields,
    analytic oracles and composed scenes.
    """

    dtype: torch.dtype

    def evaluate(self, p: torch.Tensor, v: torch.Tensor) -> FieldOutput:
        ...

    def jet(
        self,
        p: torch.Tensor,
        v: torch.Tensor,
        v_tangents: Optional[torch.Tensor] = None,
        second_pairs: Optional[SecondPairs] = None,
        create_graph: bool = False,
    ) -> FieldJet:
        ...


def _grad(y: torch.Tensor, x: torch.Tensor, create_graph: bool) -> torch.Tensor:
    if not y.requires_grad:
        return torch.zeros_like(x)
    (g,) = torch.autograd.grad(y.sum(), x, create_graph=create_graph, retain_graph=True, allow_unused=True)
    return torch.zeros_like(x) if g is None else g


def autograd_jet(
    fn: Callable[[torch.Tensor, torch.Tensor], FieldOutput],
    p: torch.Tensor,
    v: torch.Tensor,
    v_tangents: Optional[torch.Tensor] = None,
    second_pairs: Optional[SecondPairs] = None,
    create_graph: bool = False,
) -> FieldJet:
    """
    Jet of any row-wise differentiable field function by reverse-mode
    autograd on its inputs. Rows must not interact. With create_graph,
    inputs that already carry a graph keep it, so the jet stays
    differentiable with respect to whatever produced them.
    """
    with torch.enable_grad():
        if not (create_graph and p.requires_grad):
            p = p.detach().requires_grad_(True)
        if not (create_graph and v.requires_grad):
            v = v.detach().requires_grad_(v_tangents is not None)
        out = fn(p, v)
        graph = create_graph or second_pairs is not None

        grad_p_d = torch.stack([_grad(out.d[:, k], p, graph) for k in range(2)], dim=1)
        jet = FieldJet(
            output=out,
            grad_p_d=grad_p_d,
            grad_p_w1=_grad(out.w1, p, create_graph),
            grad_p_xi=_grad(out.xi, p, create_graph),
        )
        if v_tangents is not None:
            grad_v = torch.stack([_grad(out.d[:, k], v, create_graph) for k in range(2)], dim=1)
            jet.grad_v_d = torch.einsum("nki,nmi->nkm", grad_v, v_tangents)
        if second_pairs is not None:
            g = jet.grad_p_depth
            hess = torch.stack([_grad(g[:, k], p, create_graph) for k in range(3)], dim=1)
            t_a, t_b = second_pairs
            jet.second_dirs = torch.einsum("npi,nij,npj->np", t_b, hess, t_a)

    if not create_graph:
        jet = FieldJet(
            output=out.detach(),
            grad_p_d=jet.grad_p_d.detach(),
            grad_p_w1=jet.grad_p_w1.detach(),
            grad_p_xi=jet.grad_p_xi.detach(),
            grad_v_d=None if jet.grad_v_d is None else jet.grad_v_d.detach(),
            second_dirs=None if jet.second_dirs is None else jet.second_dirs.detach(),
        )
    return jet


class NetworkEvaluator:
    """Learned field; jets by tangent propagation."""

    def __init__(self, model: PddfNetwork):
        self.model = model
        self.dtype = model.dtype

    def evaluate(self, p: torch.Tensor, v: torch.Tensor) -> FieldOutput:
        return field_eval(self.model, p, v)

    def jet(self, p, v, v_tangents=None, second_pairs=None, create_graph: bool = False) -> FieldJet:
        with torch.set_grad_enabled(create_graph):
            return field_eval_jet(self.model, p, v, v_tangents=v_tangents, second_pairs=second_pairs)


class AnalyticEvaluator:
    """
    Closed-form shape as a field: both depth components carry the exact
    depth, w1 = 1, and xi is 0 or 1. Invisible depth is 0.
    """

    def __init__(self, shape: Shape, dtype: torch.dtype = torch.float64):
        self.shape = shape
        self.dtype = dtype

    def evaluate(self, p: torch.Tensor, v: torch.Tensor) -> FieldOutput:
        visible, depth, _ = analytic_hits(self.shape, p, v)
        return FieldOutput(
            d=torch.stack([depth, depth], dim=-1),
            w1=torch.ones_like(depth),
            xi=visible.to(depth.dtype),
        )

    def normals(self, p: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        return analytic_hits(self.shape, p, v)[2]

    def jet(self, p, v, v_tangents=None, second_pairs=None, create_graph: bool = False) -> FieldJet:
        return autograd_jet(self.evaluate, p, v, v_tangents, second_pairs, create_graph)


class CountingEvaluator:
    """
    Wraps an evaluator and counts queried rows. Counters are guarded by a
    lock so concurrent renders report exact totals.
    """

    def __init__(self, inner: FieldEvaluator):
        self.inner = inner
        self.dtype = inner.dtype
        self._lock = threading.Lock()
        self.count = 0
        self.jet_count = 0

    def reset(self) -> None:
        with self._lock:
            self.count = 0
            self.jet_count = 0

    def evaluate(self, p: torch.Tensor, v: torch.Tensor) -> FieldOutput:
        with self._lock:
            self.count += int(p.shape[0])
        return self.inner.evaluate(p, v)

    def jet(self, p, v, v_tangents=None, second_pairs=None, create_graph: bool = False) -> FieldJet:
        with self._lock:
            self.jet_count += int(p.shape[0])
        return self.inner.jet(p, v, v_tangents=v_tangents, second_pairs=second_pairs, create_graph=create_graph)

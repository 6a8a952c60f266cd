import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
from loguru import logger

from pddf.core.errors import ConfigError
from pddf.models.compose import ComposeParams, ScenePartSpec, SimilarityTransform
from pddf.models.field import FieldJet, FieldOutput
from pddf.models.geometry import DEFAULT_BOX, BoundingBox, parse_analytic
from pddf.services.evaluators import AnalyticEvaluator, FieldEvaluator, NetworkEvaluator, autograd_jet
from pddf.storage.checkpoint import load_checkpoint


@dataclass
class ScenePart:
    transform: SimilarityTransform
    evaluator: FieldEvaluator
    box: BoundingBox = field(default_factory=lambda: DEFAULT_BOX)
    name: str = ""


def transform_oriented_point(
    transform: SimilarityTransform,
    p: torch.Tensor,
    v: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    World to object coordinates: p' = R^T (p - t) / s, v' = R^T v.
    """
    r = torch.as_tensor(transform.matrix, dtype=p.dtype, device=p.device)
    t = torch.as_tensor(transform.translation, dtype=p.dtype, device=p.device)
    return ((p - t) @ r) / transform.scale, v @ r


def depth_to_world(transform: SimilarityTransform, depth: torch.Tensor) -> torch.Tensor:
    return depth * transform.scale


def _box_entry(p: torch.Tensor, v: torch.Tensor, box: BoundingBox) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Differentiable distance to the box along each ray (0 inside) and the
    mask of rays that reach the box.
    """
    lo = torch.as_tensor(box.min, dtype=p.dtype, device=p.device)
    hi = torch.as_tensor(box.max, dtype=p.dtype, device=p.device)
    zero = v == 0
    safe = torch.where(zero, torch.ones_like(v), v)
    t1 = (lo - p) / safe
    t2 = (hi - p) / safe
    in_slab = (p >= lo) & (p <= hi)
    inf = torch.full_like(v, float("inf"))
    t_min = torch.where(zero, torch.where(in_slab, -inf, inf), torch.minimum(t1, t2))
    t_max = torch.where(zero, torch.where(in_slab, inf, -inf), torch.maximum(t1, t2))
    t_near = t_min.max(dim=-1).values
    t_far = t_max.min(dim=-1).values

    inside = in_slab.all(dim=-1)
    hit = inside | ((t_near <= t_far) & (t_near >= 0))
    t_entry = torch.where(inside | ~hit, torch.zeros_like(t_near), t_near)
    return t_entry, hit


def part_eval(part: ScenePart, p: torch.Tensor, v: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Visibility and world-space depth of one part. Queries outside the part's
    own box move to the box entry point first; rays missing it are invisible.

    Returns:
        (xi, depth), each (N,)
    """
    p_obj, v_obj = transform_oriented_point(part.transform, p, v)
    v_obj = v_obj / v_obj.norm(dim=-1, keepdim=True)
    t_entry, hit = _box_entry(p_obj, v_obj, part.box)
    lo = torch.as_tensor(part.box.min, dtype=p.dtype, device=p.device)
    hi = torch.as_tensor(part.box.max, dtype=p.dtype, device=p.device)
    query = torch.clamp(p_obj + t_entry[:, None] * v_obj, lo, hi)

    dtype = part.evaluator.dtype
    out = part.evaluator.evaluate(query.to(dtype), v_obj.to(dtype))
    xi = out.xi.to(p.dtype) * hit.to(p.dtype)
    depth = depth_to_world(part.transform, out.depth.to(p.dtype) + t_entry)
    return xi, depth


def compose_outputs(
    xis: torch.Tensor,
    depths: torch.Tensor,
    params: ComposeParams,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Soft visibility-over-depth aggregation.

    Args:
        xis: (N, K) per-part visibilities
        depths: (N, K) per-part world depths
        params: Temperature and inverse-depth floor

    Returns:
        (xi, depth, weights): xi = 1 - prod(1 - xi_k) and the softmax
        weighted depth
    """
    xi = 1.0 - torch.prod(1.0 - xis, dim=-1)
    weights = torch.softmax(xis / (params.eta_t * (params.epsilon_s + depths)), dim=-1)
    depth = (weights * depths).sum(-1)
    return xi, depth, weights


def compose_eval(
    parts: Sequence[ScenePart],
    params: ComposeParams,
    p: torch.Tensor,
    v: torch.Tensor,
) -> FieldOutput:
    """
    Evaluate a composed scene at world-space oriented points.

    Args:
        parts: Placed part fields
        params: Composition parameters
        p: (N, 3) world positions
        v: (N, 3) world directions

    Returns:
        FieldOutput with both depth components equal to the composed depth
    """
    if not parts:
        raise ConfigError("A composed scene needs at least one part")
    evaluated = [part_eval(part, p, v) for part in parts]
    xis = torch.stack([e[0] for e in evaluated], dim=-1)
    depths = torch.stack([e[1] for e in evaluated], dim=-1)
    xi, depth, _ = compose_outputs(xis, depths, params)
    return FieldOutput(d=torch.stack([depth, depth], dim=-1), w1=torch.ones_like(depth), xi=xi)


class ComposedScene:
    """
    Scene of independently defined fields, usable wherever a single field is.
    """

    def __init__(self, parts: Sequence[ScenePart], params: Optional[ComposeParams] = None,
                 dtype: torch.dtype = torch.float64):
        if not parts:
            raise ConfigError("A composed scene needs at least one part")
        self.parts = list(parts)
        self.params = params or ComposeParams()
        self.dtype = dtype

    def evaluate(self, p: torch.Tensor, v: torch.Tensor) -> FieldOutput:
        return compose_eval(self.parts, self.params, p.to(self.dtype), v.to(self.dtype))

    def jet(self, p, v, v_tangents=None, second_pairs=None, create_graph: bool = False) -> FieldJet:
        return autograd_jet(self.evaluate, p, v, v_tangents, second_pairs, create_graph)


def build_part(spec: ScenePartSpec, base_dir: str = ".") -> ScenePart:
    """
    Instantiate one scene entry from its checkpoint or analytic description.
    """
    if spec.analytic is not None:
        evaluator = AnalyticEvaluator(parse_analytic(spec.analytic))
        name = f"analytic:{spec.analytic}"
    else:
        path = spec.checkpoint if os.path.isabs(spec.checkpoint) else os.path.join(base_dir, spec.checkpoint)
        model, _ = load_checkpoint(path)
        model.eval()
        evaluator = NetworkEvaluator(model)
        name = path
    return ScenePart(transform=spec.transform(), evaluator=evaluator, name=name)


def build_scene(
    specs: List[ScenePartSpec],
    params: Optional[ComposeParams] = None,
    base_dir: str = ".",
) -> ComposedScene:
    parts = [build_part(spec, base_dir) for spec in specs]
    logger.info(f"Composed scene with {len(parts)} parts: {[p.name for p in parts]}")
    return ComposedScene(parts, params)


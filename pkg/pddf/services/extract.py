import math
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
from loguru import logger
from scipy.spatial import cKDTree

from pddf.core.errors import ConfigError, GeometryError, NumericalError
from pddf.core.logging import log_metrics
from pddf.models.compose import ComposeParams
from pddf.models.extract import ChamferScores, PointCloud, PointCloudConfig, UdfResult, VStarConfig
from pddf.models.geometry import DEFAULT_BOX, BoundingBox
from pddf.services.compose import compose_outputs
from pddf.services.evaluators import FieldEvaluator
from pddf.services.field import DEGENERATE_GRADIENT, SirenNetwork
from pddf.services.trainer import Adam
from pddf.utils.vectors import random_unit_vectors

# Direction averages shorter than this are redrawn
_CANCELLED = 1e-12
_MAX_REDRAWS = 10
# Nearest-neighbour candidates re-scored on the indexed chamfer path
_KD_CANDIDATES = 8


class VStarModel(nn.Module):
    """
    Sinusoidal MLP mapping a position to K_c candidate unit directions.
    """

    def __init__(self, config: VStarConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.candidates = config.candidates
        generator = torch.Generator().manual_seed(config.seed)
        self.siren = SirenNetwork(
            3,
            config.hidden_sizes,
            3 * config.candidates,
            omega_0=config.omega_0,
            generator=generator,
            dtype=dtype,
        )

    @property
    def dtype(self) -> torch.dtype:
        return self.siren.head.weight.dtype

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        raw = self.siren(p).reshape(-1, self.candidates, 3)
        return raw / raw.norm(dim=-1, keepdim=True).clamp_min(_CANCELLED)


def _uniform_in_box(count: int, rng: np.random.Generator, box: BoundingBox) -> np.ndarray:
    lo, hi = np.asarray(box.min), np.asarray(box.max)
    return lo + rng.random((count, 3)) * (hi - lo)


def vstar_loss(
    evaluator: FieldEvaluator,
    vstar: VStarModel,
    p: torch.Tensor,
    config: VStarConfig,
) -> Tuple[torch.Tensor, Dict[str, float]]:
    """
    Candidate-direction loss: nearest visible depth, candidate spread and
    alignment with the surface normal seen along each candidate.

    Args:
        evaluator: Field supporting differentiable jets
        vstar: Candidate network
        p: (N, 3) positions
        config: Term weights

    Returns:
        (loss, per-term values)
    """
    k = config.candidates
    n = p.shape[0]
    cand = vstar(p)
    p_rep = p[:, None, :].expand(-1, k, -1).reshape(-1, 3)
    v = cand.reshape(-1, 3)
    jet = evaluator.jet(p_rep, v, create_graph=True)

    depth = jet.output.depth.reshape(n, k).to(cand.dtype)
    xi = jet.output.xi.reshape(n, k).to(cand.dtype)
    nearest = (depth - xi).mean()

    if k > 1:
        gram = torch.einsum("nki,nli->nkl", cand, cand)
        off_diagonal = gram.sum(dim=(1, 2)) - torch.diagonal(gram, dim1=1, dim2=2).sum(-1)
        spread = 2.0 * config.tau_n / (k * k - k) * off_diagonal.mean()
    else:
        spread = cand.sum() * 0.0

    grad = jet.grad_p_depth.to(cand.dtype)
    norm = grad.norm(dim=-1)
    valid = (norm >= DEGENERATE_GRADIENT).to(cand.dtype)
    normal = grad / norm.clamp_min(DEGENERATE_GRADIENT)[:, None]
    facing = torch.where((normal * v).sum(-1) > 0, -1.0, 1.0).to(cand.dtype)
    normal = normal * facing[:, None]
    alignment = config.tau_d * (((v * normal).sum(-1) + 1.0) ** 2 * valid).mean()

    loss = nearest + spread + alignment
    return loss, {"nearest": float(nearest.detach()), "spread": float(spread.detach()),
                  "alignment": float(alignment.detach()), "total": float(loss.detach())}


def fit_vstar(
    evaluator: FieldEvaluator,
    config: VStarConfig,
    rng: Optional[np.random.Generator] = None,
    box: BoundingBox = DEFAULT_BOX,
) -> VStarModel:
    """
    Fit a closest-direction field against a fixed field.

    Args:
        evaluator: Trained or analytic field with jet support
        config: Network and optimisation settings
        rng: Position sampler; defaults to one seeded from config.seed
        box: Domain for the uniform training positions

    Returns:
        Fitted candidate network
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    vstar = VStarModel(config, dtype=evaluator.dtype)
    params = list(vstar.parameters())
    optimizer = Adam(params, lr=config.lr)

    logger.info(f"Fitting closest-direction field ({config.candidates} candidates) for {config.iterations} iterations")
    for it in range(1, config.iterations + 1):
        p = torch.as_tensor(_uniform_in_box(config.points_per_step, rng, box), dtype=evaluator.dtype)
        loss, terms = vstar_loss(evaluator, vstar, p, config)
        if not bool(torch.isfinite(loss)):
            logger.error(f"Non-finite closest-direction loss at iteration {it}: {terms}")
            raise NumericalError(f"Non-finite closest-direction loss at iteration {it}")
        optimizer.zero_grad(set_to_none=True)
        loss.backward(inputs=params)
        optimizer.step()
        if it % 100 == 0:
            log_metrics({"stage": "vstar", "iter": it, **terms})
    return vstar


def udf_query(
    evaluator: FieldEvaluator,
    vstar: VStarModel,
    p: np.ndarray,
    params: Optional[ComposeParams] = None,
    xi_threshold: float = 0.5,
) -> UdfResult:
    """
    Unsigned distance and closest direction from softly selected candidates.

    Points where no candidate is visible are flagged as not confident.

    Args:
        evaluator: Field
        vstar: Candidate network
        p: (N, 3) positions
        params: Softmax temperature and inverse-depth floor
        xi_threshold: Visibility needed for a confident answer

    Returns:
        UdfResult with udf (N,), v_star (N, 3) and confident (N,)
    """
    params = params or vstar.config.compose
    p_t = torch.as_tensor(np.asarray(p, dtype=np.float64).reshape(-1, 3), dtype=evaluator.dtype)
    n, k = p_t.shape[0], vstar.candidates
    with torch.no_grad():
        cand = vstar(p_t.to(vstar.dtype)).to(evaluator.dtype)
        out = evaluator.evaluate(p_t[:, None, :].expand(-1, k, -1).reshape(-1, 3), cand.reshape(-1, 3))
        depth = out.depth.reshape(n, k)
        xi = out.xi.reshape(n, k)
        _, _, weights = compose_outputs(xi, depth, params)
        udf = (weights * depth).sum(-1)
        v_sum = (weights[:, :, None] * cand).sum(1)
        v_star = v_sum / v_sum.norm(dim=-1, keepdim=True).clamp_min(_CANCELLED)
        confident = (xi >= xi_threshold).any(dim=-1)

    unsure = int((~confident).sum())
    if unsure:
        logger.warning(f"{unsure}/{n} UDF queries have no visible candidate")
    return UdfResult(
        udf=udf.double().numpy(),
        v_star=v_star.double().numpy(),
        confident=confident.numpy(),
    )


def _soft_direction(
    evaluator: FieldEvaluator,
    p: np.ndarray,
    n_directions: int,
    params: ComposeParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Weighted average of random directions, weighted like a composition of
    the per-direction answers, renormalised. Cancelled averages are redrawn.
    """
    m = len(p)
    result = np.zeros((m, 3))
    todo = np.arange(m)
    for attempt in range(_MAX_REDRAWS):
        dirs = random_unit_vectors(len(todo) * n_directions, rng).reshape(len(todo), n_directions, 3)
        p_rep = np.repeat(p[todo], n_directions, axis=0)
        with torch.no_grad():
            out = evaluator.evaluate(
                torch.as_tensor(p_rep, dtype=evaluator.dtype),
                torch.as_tensor(dirs.reshape(-1, 3), dtype=evaluator.dtype),
            )
            depth = out.depth.reshape(len(todo), n_directions).double()
            xi = out.xi.reshape(len(todo), n_directions).double()
            _, _, weights = compose_outputs(xi, depth, params)
        avg = (weights.numpy()[:, :, None] * dirs).sum(axis=1)
        norm = np.linalg.norm(avg, axis=1)
        good = norm >= _CANCELLED
        result[todo[good]] = avg[good] / norm[good, None]
        todo = todo[~good]
        if len(todo) == 0:
            return result
        logger.warning(f"Redrawing directions for {len(todo)} points with a cancelled average")
    raise GeometryError(f"Direction average kept cancelling for {len(todo)} points")


def sample_point_cloud(
    evaluator: FieldEvaluator,
    config: PointCloudConfig,
    rng: np.random.Generator,
    box: BoundingBox = DEFAULT_BOX,
) -> PointCloud:
    """
    Explicit surface points from a field.

    Uniform positions in the box are projected onto the surface along a
    softly chosen nearest direction, repeated ``hops`` times. The set is
    oversampled, sorted by the visibility of the final projection, and the
    most visible ``n_points`` are kept.

    Args:
        evaluator: Field, learned, analytic or composed
        config: Counts and composition parameters
        rng: Seeded generator
        box: Field domain

    Returns:
        PointCloud with exactly n_points points and their visibilities
    """
    total = int(math.ceil((1.0 + config.oversample) * config.n_points))
    points = _uniform_in_box(total, rng, box)
    xi = np.zeros(total)
    lo, hi = np.asarray(box.min), np.asarray(box.max)

    for hop in range(config.hops):
        for start in range(0, total, config.chunk):
            sl = slice(start, start + config.chunk)
            p = points[sl]
            v_hat = _soft_direction(evaluator, p, config.n_directions, config.compose, rng)
            with torch.no_grad():
                out = evaluator.evaluate(
                    torch.as_tensor(p, dtype=evaluator.dtype),
                    torch.as_tensor(v_hat, dtype=evaluator.dtype),
                )
            depth = out.depth.double().numpy()
            xi[sl] = out.xi.double().numpy()
            points[sl] = np.clip(p + depth[:, None] * v_hat, lo, hi)
        logger.debug(f"Point sampling hop {hop + 1}/{config.hops}: mean visibility {xi.mean():.4f}")

    order = np.argsort(-xi, kind="stable")[:config.n_points]
    return PointCloud(points=points[order], xi=xi[order])


def _squared(diff: np.ndarray) -> np.ndarray:
    return (diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]) + diff[..., 2] * diff[..., 2]


def nearest_squared_brute(a: np.ndarray, b: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Squared distance from each point of a to its nearest point of b."""
    out = np.empty(len(a))
    for start in range(0, len(a), chunk):
        diff = a[start:start + chunk, None, :] - b[None, :, :]
        out[start:start + chunk] = _squared(diff).min(axis=1)
    return out


def nearest_squared_indexed(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Same result as the brute-force path: k-d tree candidates re-scored with
    the identical squared-distance expression.
    """
    k = min(_KD_CANDIDATES, len(b))
    _, index = cKDTree(b).query(a, k=k)
    index = np.asarray(index).reshape(len(a), k)
    diff = a[:, None, :] - b[index]
    return _squared(diff).min(axis=1)


def _f_score(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def chamfer_f_score(
    a: np.ndarray,
    b: np.ndarray,
    tau: float = 1e-4,
    method: str = "auto",
) -> ChamferScores:
    """
    Chamfer distance and F-scores between two point sets.

    The threshold applies to squared distances and is inclusive.

    Args:
        a: (N, 3) predicted points
        b: (M, 3) reference points
        tau: Squared-distance threshold
        method: "brute", "indexed" or "auto" (indexed above 1000 points)

    Returns:
        ChamferScores(chamfer x1000, F_tau x100, F_2tau x100)
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise GeometryError("Chamfer distance needs two non-empty point sets")

    if method == "auto":
        method = "indexed" if max(len(a), len(b)) > 1000 else "brute"
    if method == "brute":
        ab, ba = nearest_squared_brute(a, b), nearest_squared_brute(b, a)
    elif method == "indexed":
        ab, ba = nearest_squared_indexed(a, b), nearest_squared_indexed(b, a)
    else:
        raise ConfigError(f"Unknown nearest-neighbour method: {method}")

    chamfer = float(ab.mean() + ba.mean())
    scores = []
    for threshold in (tau, 2.0 * tau):
        precision = float(np.mean(ab <= threshold))
        recall = float(np.mean(ba <= threshold))
        scores.append(_f_score(precision, recall))
    return ChamferScores(chamfer=chamfer * 1000.0, f_score=scores[0] * 100.0, f_score_2tau=scores[1] * 100.0)

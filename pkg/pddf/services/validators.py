from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
from loguru import logger

from pddf.core.errors import ConfigError
from pddf.core.logging import log_metrics
from pddf.models.geometry import DEFAULT_BOX, BoundingBox
from pddf.models.validation import PropertyReport, ValidationConfig
from pddf.services.evaluators import FieldEvaluator
from pddf.services.field import surface_normal_estimate
from pddf.utils.vectors import random_unit_vectors

_MAX_ROUNDS = 50
_MIN_SECONDARY_DISTANCE = 1e-3


def _tensors(evaluator: FieldEvaluator, *arrays: np.ndarray):
    return [torch.as_tensor(a, dtype=evaluator.dtype) for a in arrays]


def _uniform_oriented(count: int, rng: np.random.Generator, box: BoundingBox) -> Tuple[np.ndarray, np.ndarray]:
    lo, hi = np.asarray(box.min), np.asarray(box.max)
    return lo + rng.random((count, 3)) * (hi - lo), random_unit_vectors(count, rng)


def sample_visible(
    evaluator: FieldEvaluator,
    count: int,
    config: ValidationConfig,
    rng: np.random.Generator,
    box: BoundingBox = DEFAULT_BOX,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Uniform oriented points that see the surface away from its silhouette.

    Keeps draws with visibility above the threshold and |n.v| at least
    ``config.silhouette_cos``.

    Returns:
        (p, v); fewer than ``count`` rows only if the field is almost
        never visible
    """
    kept_p, kept_v, total = [], [], 0
    batch = max(4 * count, 256)
    for _ in range(_MAX_ROUNDS):
        p, v = _uniform_oriented(batch, rng, box)
        p_t, v_t = _tensors(evaluator, p, v)
        with torch.no_grad():
            xi = evaluator.evaluate(p_t, v_t).xi
        rows = torch.nonzero(xi >= config.xi_threshold)[:, 0]
        if len(rows):
            jet = evaluator.jet(p_t[rows], v_t[rows])
            n, valid = surface_normal_estimate(jet.grad_p_depth, v_t[rows])
            cos = (n * v_t[rows]).sum(-1).abs()
            keep = (valid & (cos >= config.silhouette_cos)).numpy()
            r = rows.numpy()[keep]
            kept_p.append(p[r])
            kept_v.append(v[r])
            total += len(r)
        if total >= count:
            break
    if total < count:
        logger.warning(f"Only {total}/{count} visible validation samples found")
    if not kept_p:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.concatenate(kept_p)[:count], np.concatenate(kept_v)[:count]


def _report(
    name: str,
    residuals: np.ndarray,
    tolerance: float,
    passed: Optional[bool] = None,
    violation_fraction: Optional[float] = None,
    extra: Optional[Dict[str, float]] = None,
    notes: str = "",
) -> PropertyReport:
    residuals = np.abs(np.asarray(residuals, dtype=np.float64))
    if len(residuals) == 0:
        return PropertyReport(
            name=name, sample_count=0, mean=0.0, median=0.0, p95=0.0, passed=False,
            tolerance=tolerance, violation_fraction=violation_fraction, extra=extra or {},
            notes=(notes + " no visible samples").strip(),
        )
    mean = float(residuals.mean())
    return PropertyReport(
        name=name,
        sample_count=len(residuals),
        mean=mean,
        median=float(np.median(residuals)),
        p95=float(np.percentile(residuals, 95)),
        passed=bool(mean <= tolerance) if passed is None else bool(passed),
        tolerance=tolerance,
        violation_fraction=violation_fraction,
        extra=extra or {},
        notes=notes,
    )


def _silhouette_note(config: ValidationConfig) -> str:
    return f"samples with |n.v| < {config.silhouette_cos} excluded"


def check_directed_eikonal(
    evaluator: FieldEvaluator,
    n_samples: Optional[int] = None,
    config: Optional[ValidationConfig] = None,
    rng: Optional[np.random.Generator] = None,
    box: BoundingBox = DEFAULT_BOX,
) -> PropertyReport:
    """
    Directed eikonal residual |grad_p d . v + 1| over visible samples. The
    visibility residual |grad_p xi . v| over uniform samples is reported in
    ``extra``.
    """
    config = config or ValidationConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n_samples = n_samples or config.n_samples

    p, v = sample_visible(evaluator, n_samples, config, rng, box)
    residual = np.zeros(0)
    if len(p):
        p_t, v_t = _tensors(evaluator, p, v)
        jet = evaluator.jet(p_t, v_t)
        residual = ((jet.grad_p_depth * v_t).sum(-1) + 1.0).abs().double().numpy()

    p_u, v_u = _uniform_oriented(n_samples, rng, box)
    p_t, v_t = _tensors(evaluator, p_u, v_u)
    xi_residual = (evaluator.jet(p_t, v_t).grad_p_xi * v_t).sum(-1).abs().double().numpy()

    return _report(
        "eikonal",
        residual,
        config.eikonal_tol,
        extra={"xi_mean": float(xi_residual.mean()), "xi_p95": float(np.percentile(xi_residual, 95))},
        notes=_silhouette_note(config),
    )


def depth_gradient_norms(evaluator: FieldEvaluator, p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Norm of the active depth's position gradient per oriented point."""
    p_t, v_t = _tensors(evaluator, np.asarray(p).reshape(-1, 3), np.asarray(v).reshape(-1, 3))
    return evaluator.jet(p_t, v_t).grad_p_depth.norm(dim=-1).double().numpy()


def check_grad_norm_bound(
    evaluator: FieldEvaluator,
    n_samples: Optional[int] = None,
    config: Optional[ValidationConfig] = None,
    rng: Optional[np.random.Generator] = None,
    box: BoundingBox = DEFAULT_BOX,
) -> PropertyReport:
    """
    Visible depth gradients must have norm at least one. Residuals are the
    shortfall below one; the check passes when the fraction below
    ``1 - gradnorm_margin`` is small. Evaluators exposing exact normals
    also report the deviation from 1/|cos(n, v)|.
    """
    config = config or ValidationConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n_samples = n_samples or config.n_samples

    p, v = sample_visible(evaluator, n_samples, config, rng, box)
    norms = depth_gradient_norms(evaluator, p, v) if len(p) else np.zeros(0)
    shortfall = np.maximum(0.0, 1.0 - norms)
    fraction = float(np.mean(norms < 1.0 - config.gradnorm_margin)) if len(norms) else 1.0

    extra: Dict[str, float] = {}
    normals = getattr(evaluator, "normals", None)
    if callable(normals) and len(p):
        p_t, v_t = _tensors(evaluator, p, v)
        with torch.no_grad():
            n = normals(p_t, v_t).double().numpy()
        cos = np.abs(np.sum(n * v, axis=1))
        identity = np.abs(norms - 1.0 / cos)
        extra = {"identity_mean": float(identity.mean()), "identity_max": float(identity.max())}

    return _report(
        "gradnorm",
        shortfall,
        config.gradnorm_max_fraction,
        passed=fraction <= config.gradnorm_max_fraction,
        violation_fraction=fraction,
        extra=extra,
        notes=_silhouette_note(config),
    )


def gradient_consistency_residuals(
    evaluator: FieldEvaluator,
    p: np.ndarray,
    v: np.ndarray,
    omega: np.ndarray,
) -> np.ndarray:
    """
    Relative residual between the view derivative of depth along
    delta = omega x v and depth times the position derivative along delta.
    """
    delta = np.cross(omega, v)
    p_t, v_t, d_t = _tensors(evaluator, p, v, delta)
    jet = evaluator.jet(p_t, v_t, v_tangents=d_t[:, None, :])
    lhs = jet.grad_v_depth[:, 0]
    rhs = jet.output.depth * (jet.grad_p_depth * d_t).sum(-1)
    return ((lhs - rhs).abs() / (rhs.abs() + 1e-6)).double().numpy()


def check_gradient_consistency(
    evaluator: FieldEvaluator,
    n_samples: Optional[int] = None,
    config: Optional[ValidationConfig] = None,
    rng: Optional[np.random.Generator] = None,
    box: BoundingBox = DEFAULT_BOX,
) -> PropertyReport:
    config = config or ValidationConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n_samples = n_samples or config.n_samples

    p, v = sample_visible(evaluator, n_samples, config, rng, box)
    residual = np.zeros(0)
    if len(p):
        omega = rng.standard_normal((len(p), 3))
        residual = gradient_consistency_residuals(evaluator, p, v, omega)
    report = _report("gradconsistency", residual, config.consistency_tol, notes=_silhouette_note(config))
    if report.sample_count:
        report.passed = report.median <= config.consistency_tol
    return report


def check_view_consistency(
    evaluator: FieldEvaluator,
    n_samples: Optional[int] = None,
    config: Optional[ValidationConfig] = None,
    rng: Optional[np.random.Generator] = None,
    box: BoundingBox = DEFAULT_BOX,
) -> PropertyReport:
    """
    A surface point seen from one viewpoint must be opaque from others.

    For each visible (p1, v1) with hit q1, secondary origins p2 look at q1;
    a pair fails if it is not visible or its depth exceeds |p2 - q1| plus
    the slack. Residuals are the depth excess beyond |p2 - q1|.
    """
    config = config or ValidationConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    n_samples = n_samples or config.n_samples

    p, v = sample_visible(evaluator, n_samples, config, rng, box)
    if len(p) == 0:
        return _report("viewconsistency", np.zeros(0), config.view_max_fraction, violation_fraction=1.0)

    p_t, v_t = _tensors(evaluator, p, v)
    with torch.no_grad():
        depth = evaluator.evaluate(p_t, v_t).depth.double().numpy()
    q = p + depth[:, None] * v

    lo, hi = np.asarray(box.min), np.asarray(box.max)
    k = config.view_secondary
    q_rep = np.repeat(q, k, axis=0)
    p2 = lo + rng.random((len(q_rep), 3)) * (hi - lo)
    offset = q_rep - p2
    dist = np.linalg.norm(offset, axis=1)
    usable = dist >= _MIN_SECONDARY_DISTANCE
    p2, offset, dist = p2[usable], offset[usable], dist[usable]
    v2 = offset / dist[:, None]

    p2_t, v2_t = _tensors(evaluator, p2, v2)
    with torch.no_grad():
        out = evaluator.evaluate(p2_t, v2_t)
    xi2 = out.xi.double().numpy()
    d2 = out.depth.double().numpy()

    hidden = xi2 < config.xi_threshold
    beyond = d2 > dist + config.view_slack
    violations = hidden | beyond
    fraction = float(violations.mean()) if len(violations) else 0.0
    excess = np.maximum(0.0, d2 - dist)

    return _report(
        "viewconsistency",
        excess,
        config.view_max_fraction,
        passed=fraction <= config.view_max_fraction,
        violation_fraction=fraction,
        extra={"visibility_failures": float(hidden.sum()), "depth_violations": float(beyond.sum()),
               "pairs": float(len(violations))},
        notes=_silhouette_note(config),
    )


CHECKS: Dict[str, Callable[..., PropertyReport]] = {
    "eikonal": check_directed_eikonal,
    "gradnorm": check_grad_norm_bound,
    "gradconsistency": check_gradient_consistency,
    "viewconsistency": check_view_consistency,
}


def run_validation(
    evaluator: FieldEvaluator,
    checks: List[str],
    config: Optional[ValidationConfig] = None,
    box: BoundingBox = DEFAULT_BOX,
) -> List[PropertyReport]:
    """
    Run the named checks, each with its own generator seeded from
    ``config.seed`` so results do not depend on which checks are selected.
    """
    config = config or ValidationConfig()
    unknown = [c for c in checks if c not in CHECKS]
    if unknown:
        raise ConfigError(f"Unknown checks {unknown}; choose from {sorted(CHECKS)}")

    reports = []
    for name in checks:
        rng = np.random.default_rng([config.seed, list(CHECKS).index(name)])
        report = CHECKS[name](evaluator, config=config, rng=rng, box=box)
        status = "passed" if report.passed else "FAILED"
        logger.info(f"Check {name} {status}: mean {report.mean:.3e}, p95 {report.p95:.3e} over {report.sample_count} samples")
        log_metrics({"stage": "validate", **report.model_dump(exclude={"extra", "notes"})})
        reports.append(report)
    return reports

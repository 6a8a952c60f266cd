from typing import Any, Callable, Dict, Optional, Protocol, Tuple

import numpy as np
from loguru import logger

from pddf.core.errors import ConfigError
from pddf.models.geometry import DEFAULT_BOX, BoundingBox, HitBatch, TriangleMesh
from pddf.models.samples import SAMPLE_TYPE_ORDER, DatasetSpec, SampleSet, SampleType
from pddf.services.bvh import MeshBVH
from pddf.services.geometry import (
    Shape, analytic_hit_batch, analytic_surface_sample, box_boundary_sample,
    ray_box_exit_batch, raycast_mesh_batch, surface_sample,
)
from pddf.storage.dataset_file import write_dataset
from pddf.utils.vectors import dot, random_unit_vectors, tangent_basis_batch

HELD_OUT_SEED_OFFSET = 1000
MAX_RECORDS = 2 ** 32 - 1


class GroundTruthOracle(Protocol):
    """Exact ray queries and surface samples for labelling training data."""

    def cast(self, p: np.ndarray, v: np.ndarray) -> HitBatch:
        ...

    def sample_surface(self, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        ...

    def describe(self) -> Dict[str, Any]:
        ...


class MeshOracle:
    def __init__(self, mesh: TriangleMesh, name: str = "mesh", accelerate: bool = True):
        self.mesh = mesh
        self.name = name
        self.bvh = MeshBVH(mesh) if accelerate and len(mesh) else None

    def cast(self, p: np.ndarray, v: np.ndarray) -> HitBatch:
        return raycast_mesh_batch(self.mesh, p, v, bvh=self.bvh)

    def sample_surface(self, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        return surface_sample(self.mesh, count, rng)

    def describe(self) -> Dict[str, Any]:
        return {"kind": "mesh", "name": self.name, "triangles": len(self.mesh), "vertices": int(len(self.mesh.vertices))}


class AnalyticOracle:
    def __init__(self, shape: Shape, box: BoundingBox = DEFAULT_BOX):
        self.shape = shape
        self.box = box

    def cast(self, p: np.ndarray, v: np.ndarray) -> HitBatch:
        return analytic_hit_batch(self.shape, p, v)

    def sample_surface(self, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        return analytic_surface_sample(self.shape, count, rng, self.box)

    def describe(self) -> Dict[str, Any]:
        return {"kind": "analytic", "shape": self.shape.model_dump(mode="json")}


def _collect(n: int, make: Callable[[int], Tuple[np.ndarray, np.ndarray, np.ndarray]], label: str) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw candidate (p, v) batches until n valid rows are gathered.
    """
    ps, vs = [], []
    have = 0
    rounds = 0
    while have < n:
        p, v, ok = make(n - have)
        if rounds > 0 and not ok.all():
            logger.debug(f"Resampling {int((~ok).sum())} {label} samples")
        ps.append(p[ok])
        vs.append(v[ok])
        have += int(ok.sum())
        rounds += 1
        if rounds > 1000:
            raise ConfigError(f"Could not construct {label} samples inside the bounding box")
    return np.concatenate(ps)[:n], np.concatenate(vs)[:n]


def _tangent_directions(n0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    t_x, t_y = tangent_basis_batch(n0, rng)
    theta = rng.random(len(n0)) * 2.0 * np.pi
    return np.cos(theta)[:, None] * t_x + np.sin(theta)[:, None] * t_y


def _segment_points(q0: np.ndarray, a: np.ndarray, rng: np.random.Generator, box: BoundingBox) -> np.ndarray:
    exit_point = ray_box_exit_batch(q0, a, box)
    u = rng.random(len(q0))
    return q0 + u[:, None] * (exit_point - q0)


def draw_samples(
    oracle: GroundTruthOracle,
    kind: SampleType,
    n: int,
    spec: DatasetSpec,
    rng: np.random.Generator,
    box: BoundingBox = DEFAULT_BOX,
) -> SampleSet:
    """
    Construct n oriented points of one type and label them with the oracle.

    Args:
        oracle: Ground-truth mesh or analytic shape
        kind: Sample type
        n: Number of samples
        spec: Dataset settings (boundary bias, offset epsilon)
        rng: Seeded generator
        box: Field domain

    Returns:
        Labelled samples
    """
    if n < 0:
        raise ConfigError(f"Sample count must be non-negative, got {n}")
    if n == 0:
        return SampleSet.empty(np.float64)

    lo, hi = np.asarray(box.min), np.asarray(box.max)

    if kind == SampleType.U:
        def make(m):
            p = lo + rng.random((m, 3)) * (hi - lo)
            return p, random_unit_vectors(m, rng), np.ones(m, dtype=bool)

    elif kind == SampleType.B:
        def make(m):
            p, inward = box_boundary_sample(m, rng, box)
            v = random_unit_vectors(m, rng)
            s = dot(v, inward)
            v = np.where((s < 0)[:, None], -v, v)
            return p, v, s != 0.0

    elif kind == SampleType.S:
        def make(m):
            q, _ = oracle.sample_surface(m, rng)
            return q, random_unit_vectors(m, rng), box.contains(q)

    elif kind == SampleType.A:
        def make(m):
            q0, _ = oracle.sample_surface(m, rng)
            a = random_unit_vectors(m, rng)
            ok = box.contains(q0)
            p = np.where(ok[:, None], q0, 0.0)
            p = _segment_points(p, a, rng, box)
            return p, -a, ok

    elif kind == SampleType.T:
        def make(m):
            q0, n0 = oracle.sample_surface(m, rng)
            a = _tangent_directions(n0, rng)
            ok = box.contains(q0)
            p = np.where(ok[:, None], q0, 0.0)
            p = _segment_points(p, a, rng, box)
            return p, -a, ok

    elif kind == SampleType.O:
        def make(m):
            q0, n0 = oracle.sample_surface(m, rng)
            a = _tangent_directions(n0, rng)
            sign = rng.choice(np.array([-1.0, 1.0]), size=m)
            p = q0 + (sign * spec.epsilon_o)[:, None] * n0
            return p, -a, box.contains(p)

    else:
        raise ConfigError(f"Unknown sample type {kind!r}")

    p, v = _collect(n, make, kind.value)

    if kind in (SampleType.A, SampleType.T, SampleType.O) and spec.boundary_bias > 0.0:
        biased = rng.random(n) < spec.boundary_bias
        if biased.any():
            p[biased] = ray_box_exit_batch(p[biased], -v[biased], box)

    hits = oracle.cast(p, v)
    return SampleSet(
        p=p,
        v=v,
        kind=np.full(n, kind.code, dtype=np.uint8),
        visible=hits.visible.astype(np.uint8),
        depth=hits.depth,
        normal=hits.normal,
    )


def generate_dataset(
    oracle: GroundTruthOracle,
    spec: DatasetSpec,
    box: BoundingBox = DEFAULT_BOX,
    seed_offset: int = 0,
) -> SampleSet:
    """
    All six sample types in canonical order. Type k draws from its own
    stream seeded with seed + k (+ seed_offset).
    """
    total = sum(spec.counts.values())
    if total > MAX_RECORDS:
        raise ConfigError(f"Dataset of {total} records exceeds the format limit of {MAX_RECORDS}")

    parts = []
    for k, kind in enumerate(SAMPLE_TYPE_ORDER):
        rng = np.random.default_rng(spec.seed + seed_offset + k)
        count = spec.counts.get(kind, 0)
        parts.append(draw_samples(oracle, kind, count, spec, rng, box))
        if count:
            visible = float(parts[-1].visible.mean())
            logger.info(f"Drew {count} {kind.value}-type samples ({visible:.1%} visible)")
    return SampleSet.concatenate(parts)


def dataset_header(oracle: GroundTruthOracle, spec: DatasetSpec) -> Dict[str, Any]:
    return {
        "counts": {t.value: int(spec.counts.get(t, 0)) for t in SAMPLE_TYPE_ORDER},
        "epsilon_o": spec.epsilon_o,
        "boundary_bias": spec.boundary_bias,
        "seed": spec.seed,
        "oracle": oracle.describe(),
    }


def build_dataset(
    oracle: GroundTruthOracle,
    spec: DatasetSpec,
    path: str,
    box: BoundingBox = DEFAULT_BOX,
) -> SampleSet:
    """
    Generate every sample type and write them to a dataset file.

    Args:
        oracle: Ground-truth source
        spec: Counts, bias, offset and seed
        path: Output file
        box: Field domain

    Returns:
        The samples as written (float32)
    """
    samples = generate_dataset(oracle, spec, box).astype(np.float32)
    write_dataset(path, samples, dataset_header(oracle, spec))
    logger.info(f"Wrote {len(samples)} samples to {path}")
    return samples


def build_held_out(
    oracle: GroundTruthOracle,
    spec: DatasetSpec,
    box: BoundingBox = DEFAULT_BOX,
    counts: Optional[Dict[SampleType, int]] = None,
) -> SampleSet:
    """Evaluation samples drawn with seed + 1000."""
    if counts is not None:
        spec = spec.model_copy(update={"counts": {t: counts.get(t, 0) for t in SAMPLE_TYPE_ORDER}})
    return generate_dataset(oracle, spec, box, seed_offset=HELD_OUT_SEED_OFFSET).astype(np.float32)

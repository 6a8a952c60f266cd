from typing import Optional, Tuple, Union

import numpy as np
import torch
from loguru import logger

from pddf.core.errors import GeometryError
from pddf.models.geometry import (
    DEFAULT_BOX, BoundingBox, BoxShape, HitBatch, HitRecord, OrientedPoint,
    PlaneShape, SphereShape, TriangleMesh,
)
from pddf.utils.vectors import cross, dot, random_unit_vectors, tangent_basis_batch

DET_EPSILON = 1e-9
MIN_T = -1e-7
ON_SURFACE_TOLERANCE = 1e-12

Shape = Union[SphereShape, PlaneShape, BoxShape]


# ---------------------------------------------------------------------------
# Ray-triangle
# ---------------------------------------------------------------------------

def intersect_triangles(
    origins: np.ndarray,
    dirs: np.ndarray,
    v0: np.ndarray,
    e1: np.ndarray,
    e2: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Determinant-based ray/triangle test on broadcastable arrays.

    Every quantity is computed elementwise in a fixed order, so the same
    (ray, triangle) pair gives the same bits whatever the batch shape.

    Args:
        origins: (..., 3) ray origins
        dirs: (..., 3) unit ray directions
        v0: (..., 3) first triangle vertex
        e1: (..., 3) v1 - v0
        e2: (..., 3) v2 - v0

    Returns:
        (t, u, w); t is +inf on a miss, and hits with -1e-7 <= t < 0 are
        clamped to 0
    """
    pvec = cross(dirs, e2)
    det = dot(e1, pvec)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv_det = 1.0 / det
        tvec = origins - v0
        u = dot(tvec, pvec) * inv_det
        qvec = cross(tvec, e1)
        w = dot(dirs, qvec) * inv_det
        t = dot(e2, qvec) * inv_det
    hit = (np.abs(det) >= DET_EPSILON) & (u >= 0.0) & (u <= 1.0) & (w >= 0.0) & (u + w <= 1.0) & (t >= MIN_T)
    t = np.where(hit, np.maximum(t, 0.0), np.inf)
    return t, u, w


def ray_triangle_intersect(
    origin: np.ndarray,
    direction: np.ndarray,
    tri: np.ndarray,
) -> Optional[Tuple[float, np.ndarray]]:
    """
    Single ray against a single triangle.

    Args:
        origin: Ray origin
        direction: Unit direction
        tri: (3, 3) triangle vertices

    Returns:
        (t, barycentric coordinates) or None on a miss
    """
    tri = np.asarray(tri, dtype=np.float64)
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    t, u, w = intersect_triangles(o, d, tri[0], tri[1] - tri[0], tri[2] - tri[0])
    if not np.isfinite(t):
        return None
    return float(t), np.array([1.0 - u - w, u, w])


# ---------------------------------------------------------------------------
# Mesh raycasting
# ---------------------------------------------------------------------------

def _finish_hits(mesh: TriangleMesh, v: np.ndarray, t: np.ndarray, index: np.ndarray) -> HitBatch:
    visible = np.isfinite(t)
    normal = np.zeros_like(v)
    tri = np.where(visible, index, -1)
    n = mesh.normals[tri[visible]]
    flip = dot(n, v[visible]) > 0.0
    n[flip] = -n[flip]
    normal[visible] = n
    return HitBatch(
        visible=visible,
        depth=np.where(visible, t, 0.0),
        normal=normal,
        triangle_index=tri,
    )


def raycast_mesh_brute(mesh: TriangleMesh, p: np.ndarray, v: np.ndarray, chunk: int = 256) -> HitBatch:
    """
    Cast every ray against every triangle. Reference for the accelerated path.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    n = len(p)
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -1, dtype=np.int64)
    if len(mesh) == 0:
        return _finish_hits(mesh, v, best_t, best_i)

    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        t, _, _ = intersect_triangles(
            p[sl, None, :], v[sl, None, :],
            mesh.v0[None], mesh.e1[None], mesh.e2[None],
        )
        # argmin returns the first minimum: lowest triangle index on ties
        idx = np.argmin(t, axis=1)
        best_i[sl] = idx
        best_t[sl] = t[np.arange(len(idx)), idx]
    return _finish_hits(mesh, v, best_t, best_i)


def raycast_mesh_batch(mesh: TriangleMesh, p: np.ndarray, v: np.ndarray, bvh=None) -> HitBatch:
    """
    First intersection of each ray with the mesh, through a BVH.

    Args:
        mesh: Triangle mesh
        p: (N, 3) origins
        v: (N, 3) unit directions
        bvh: Optional prebuilt MeshBVH for this mesh

    Returns:
        Batched hits; normals face against v
    """
    from pddf.services.bvh import MeshBVH

    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    if len(mesh) == 0:
        return _finish_hits(mesh, v, np.full(len(p), np.inf), np.full(len(p), -1, dtype=np.int64))
    if bvh is None:
        bvh = MeshBVH(mesh)
    t, index = bvh.cast(p, v)
    return _finish_hits(mesh, v, t, index)


def raycast_mesh(mesh: TriangleMesh, op: OrientedPoint, bvh=None) -> HitRecord:
    hits = raycast_mesh_batch(mesh, np.asarray([op.p]), np.asarray([op.v]), bvh=bvh)
    return hits.record(0)


# ---------------------------------------------------------------------------
# Bounding box
# ---------------------------------------------------------------------------

def _slab(p: np.ndarray, v: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    zero = v == 0.0
    safe = np.where(zero, 1.0, v)
    t1 = (lo - p) / safe
    t2 = (hi - p) / safe
    in_slab = (p >= lo) & (p <= hi)
    t_min = np.where(zero, np.where(in_slab, -np.inf, np.inf), np.minimum(t1, t2))
    t_max = np.where(zero, np.where(in_slab, np.inf, -np.inf), np.maximum(t1, t2))
    return t_min, t_max


def ray_box_entry_batch(p: np.ndarray, v: np.ndarray, box: BoundingBox = DEFAULT_BOX) -> Tuple[np.ndarray, np.ndarray]:
    """
    Where each ray p + t v (t >= 0) enters the box.

    Points inside (or on) the box are returned as-is. The entry coordinate
    on the entered face is snapped exactly onto that face.

    Args:
        p: (N, 3) origins
        v: (N, 3) directions
        box: Axis-aligned box

    Returns:
        (entry, hit); rows with hit False hold NaN
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    lo, hi = np.asarray(box.min), np.asarray(box.max)
    inside = np.all((p >= lo) & (p <= hi), axis=1)

    t_min, t_max = _slab(p, v, lo, hi)
    axis = np.argmax(t_min, axis=1)
    rows = np.arange(len(p))
    t_near = t_min[rows, axis]
    t_far = t_max.min(axis=1)
    hit = inside | ((t_near <= t_far) & (t_near >= 0.0) & np.isfinite(t_near))

    entry = np.full_like(p, np.nan)
    entry[inside] = p[inside]
    outside_hit = hit & ~inside
    if outside_hit.any():
        r = rows[outside_hit]
        a = axis[outside_hit]
        e = p[r] + t_near[r, None] * v[r]
        e[np.arange(len(r)), a] = np.where(v[r, a] > 0.0, lo[a], hi[a])
        entry[r] = np.clip(e, lo, hi)
    return entry, hit


def ray_box_entry(p: np.ndarray, v: np.ndarray, box: BoundingBox = DEFAULT_BOX) -> Optional[np.ndarray]:
    entry, hit = ray_box_entry_batch(np.asarray(p)[None], np.asarray(v)[None], box)
    return entry[0] if hit[0] else None


def ray_box_exit_batch(p: np.ndarray, v: np.ndarray, box: BoundingBox = DEFAULT_BOX) -> np.ndarray:
    """
    Exit point of rays starting inside (or on) the box, snapped onto the
    exit face.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    lo, hi = np.asarray(box.min), np.asarray(box.max)
    _, t_max = _slab(p, v, lo, hi)
    axis = np.argmin(t_max, axis=1)
    rows = np.arange(len(p))
    t_far = np.maximum(t_max[rows, axis], 0.0)
    out = p + t_far[:, None] * v
    out[rows, axis] = np.where(v[rows, axis] > 0.0, hi[axis], lo[axis])
    return np.clip(out, lo, hi)


def box_boundary_sample(count: int, rng: np.random.Generator, box: BoundingBox = DEFAULT_BOX) -> Tuple[np.ndarray, np.ndarray]:
    """
    Area-uniform points on the box boundary with their inward face normals.
    """
    lo, hi = np.asarray(box.min), np.asarray(box.max)
    ext = hi - lo
    face_area = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]])
    probs = np.repeat(face_area, 2) / (2.0 * face_area.sum())
    face = rng.choice(6, size=count, p=probs)
    axis, side = face // 2, face % 2
    p = lo + rng.random((count, 3)) * ext
    rows = np.arange(count)
    p[rows, axis] = np.where(side == 0, lo[axis], hi[axis])
    inward = np.zeros((count, 3))
    inward[rows, axis] = np.where(side == 0, 1.0, -1.0)
    return p, inward


# ---------------------------------------------------------------------------
# Analytic shapes (torch, differentiable in p and v)
# ---------------------------------------------------------------------------

def _safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    positive = x > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, x, torch.ones_like(x))), torch.zeros_like(x))


def _zero_with_grad(x: torch.Tensor) -> torch.Tensor:
    # Exactly zero, but differentiates like x (on-surface origins)
    return x - x.detach()


def _sphere_hits(shape: SphereShape, p: torch.Tensor, v: torch.Tensor):
    c = torch.as_tensor(shape.center, dtype=p.dtype, device=p.device)
    oc = p - c
    b = (oc * v).sum(-1)
    cq = (oc * oc).sum(-1) - shape.radius ** 2
    disc = b * b - cq
    sq = _safe_sqrt(disc)

    on = cq.abs() <= ON_SURFACE_TOLERANCE
    outside = cq > ON_SURFACE_TOLERANCE
    visible = on | ~outside | ((disc >= 0) & (b < 0))
    depth = torch.where(outside, -b - sq, -b + sq)
    leaving = torch.where(b < 0, -b - sq, -b + sq)
    depth = torch.where(on, _zero_with_grad(leaving), depth)
    depth = torch.where(~visible, torch.zeros_like(depth), depth)

    q = p + depth[:, None] * v
    normal = (q - c) / shape.radius
    return visible, depth, normal


def _plane_hits(shape: PlaneShape, p: torch.Tensor, v: torch.Tensor):
    n = torch.as_tensor(shape.normal, dtype=p.dtype, device=p.device)
    q0 = torch.as_tensor(shape.point, dtype=p.dtype, device=p.device)
    dist = ((p - q0) * n).sum(-1)
    denom = (v * n).sum(-1)
    nonzero = denom != 0
    t = -dist / torch.where(nonzero, denom, torch.ones_like(denom))

    on = dist.abs() <= ON_SURFACE_TOLERANCE
    visible = on | (nonzero & (t > 0))
    depth = torch.where(on, _zero_with_grad(t), t)
    depth = torch.where(~visible, torch.zeros_like(t), depth)
    normal = n.expand_as(p).clone()
    return visible, depth, normal


def _box_hits(shape: BoxShape, p: torch.Tensor, v: torch.Tensor):
    lo = torch.as_tensor(shape.min, dtype=p.dtype, device=p.device)
    hi = torch.as_tensor(shape.max, dtype=p.dtype, device=p.device)
    zero = v == 0
    safe = torch.where(zero, torch.ones_like(v), v)
    t1 = (lo - p) / safe
    t2 = (hi - p) / safe
    in_slab = (p >= lo) & (p <= hi)
    inf = torch.full_like(v, float("inf"))
    t_min = torch.where(zero, torch.where(in_slab, -inf, inf), torch.minimum(t1, t2))
    t_max = torch.where(zero, torch.where(in_slab, inf, -inf), torch.maximum(t1, t2))
    t_near, near_axis = t_min.max(dim=-1)
    t_far, far_axis = t_max.min(dim=-1)

    inside = in_slab.all(dim=-1)
    gap = torch.minimum(p - lo, hi - p)
    on = inside & (gap.min(dim=-1).values <= ON_SURFACE_TOLERANCE)
    hit_outside = ~inside & (t_near <= t_far) & (t_near >= 0)
    visible = on | inside | hit_outside

    depth = torch.where(inside, t_far, t_near)
    depth = torch.where(on | ~visible, torch.zeros_like(depth), depth)
    depth = torch.where(torch.isfinite(depth), depth, torch.zeros_like(depth))

    axis = torch.where(on, gap.argmin(dim=-1), torch.where(inside, far_axis, near_axis))
    onehot = torch.nn.functional.one_hot(axis, 3).to(p.dtype)
    outward_on = torch.where((p - lo).gather(1, axis[:, None])[:, 0] <= (hi - p).gather(1, axis[:, None])[:, 0], -1.0, 1.0)
    v_axis = v.gather(1, axis[:, None])[:, 0]
    sign = torch.where(v_axis != 0, -torch.sign(v_axis), outward_on.to(p.dtype))
    normal = onehot * sign[:, None]
    return visible, depth, normal


def analytic_hits(shape: Shape, p: torch.Tensor, v: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Closed-form first-hit visibility, depth and normal for a batch of rays.

    The view direction is normalised first, so derivatives with respect to
    v only see its component orthogonal to v. Depth is differentiable in p
    and v; invisible rows hold depth 0.

    Args:
        shape: Sphere, plane or box
        p: (N, 3) positions
        v: (N, 3) directions

    Returns:
        (visible bool (N,), depth (N,), normal (N, 3) with normal.v <= 0)
    """
    v = v / v.norm(dim=-1, keepdim=True)
    if isinstance(shape, SphereShape):
        visible, depth, normal = _sphere_hits(shape, p, v)
    elif isinstance(shape, PlaneShape):
        visible, depth, normal = _plane_hits(shape, p, v)
    elif isinstance(shape, BoxShape):
        visible, depth, normal = _box_hits(shape, p, v)
    else:
        raise GeometryError(f"Unsupported analytic shape: {shape!r}")

    flip = (normal * v).sum(-1) > 0
    normal = torch.where(flip[:, None], -normal, normal)
    return visible, depth, normal


def analytic_hit_batch(shape: Shape, p: np.ndarray, v: np.ndarray) -> HitBatch:
    with torch.no_grad():
        visible, depth, normal = analytic_hits(
            shape,
            torch.as_tensor(np.asarray(p, dtype=np.float64).reshape(-1, 3)),
            torch.as_tensor(np.asarray(v, dtype=np.float64).reshape(-1, 3)),
        )
    visible = visible.numpy()
    return HitBatch(
        visible=visible,
        depth=depth.numpy(),
        normal=np.where(visible[:, None], normal.numpy(), 0.0),
        triangle_index=np.full(len(visible), -1, dtype=np.int64),
    )


def analytic_ddf_eval(shape: Shape, op: OrientedPoint) -> HitRecord:
    return analytic_hit_batch(shape, np.asarray([op.p]), np.asarray([op.v])).record(0)


def analytic_surface_sample(
    shape: Shape,
    count: int,
    rng: np.random.Generator,
    box: BoundingBox = DEFAULT_BOX,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Area-uniform surface points and outward normals of an analytic shape.
    Planes are sampled over their intersection with the box.
    """
    if isinstance(shape, SphereShape):
        n = random_unit_vectors(count, rng)
        return np.asarray(shape.center) + shape.radius * n, n

    if isinstance(shape, BoxShape):
        lo, hi = np.asarray(shape.min), np.asarray(shape.max)
        q, inward = box_boundary_sample(count, rng, BoundingBox(min=tuple(lo), max=tuple(hi)))
        return q, -inward

    if isinstance(shape, PlaneShape):
        n0 = np.asarray(shape.normal, dtype=np.float64)
        t_x, t_y = tangent_basis_batch(n0[None], rng)
        t_x, t_y = t_x[0], t_y[0]
        lo, hi = np.asarray(box.min), np.asarray(box.max)
        centre = np.asarray(shape.point) + dot((lo + hi) / 2.0 - np.asarray(shape.point), n0) * n0
        half = float(np.linalg.norm(hi - lo))
        out = np.empty((0, 3))
        while len(out) < count:
            uv = (rng.random((2 * count, 2)) * 2.0 - 1.0) * half
            q = centre + uv[:, :1] * t_x + uv[:, 1:] * t_y
            q = q[np.all((q >= lo) & (q <= hi), axis=1)]
            if len(q) == 0 and len(out) == 0:
                raise GeometryError("Plane does not intersect the bounding box")
            out = np.concatenate([out, q])
        return out[:count], np.tile(n0, (count, 1))

    raise GeometryError(f"Unsupported analytic shape: {shape!r}")


# ---------------------------------------------------------------------------
# Frames and surface sampling
# ---------------------------------------------------------------------------

def tangent_basis(n: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    t_x, t_y = tangent_basis_batch(np.asarray(n, dtype=np.float64)[None], rng)
    return t_x[0], t_y[0]


def surface_sample(mesh: TriangleMesh, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Area-weighted uniform surface samples.

    Args:
        mesh: Triangle mesh
        count: Number of samples
        rng: Seeded generator

    Returns:
        (points, triangle normals), each (count, 3)
    """
    total = mesh.total_area if len(mesh) else 0.0
    if total <= 0.0:
        logger.error("Surface sampling requested on a mesh with zero area")
        raise GeometryError("Cannot sample the surface of a mesh with zero total area")

    tri = rng.choice(len(mesh), size=count, p=mesh.areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    a = 1.0 - r1
    b = r1 * (1.0 - r2)
    c = r1 * r2
    verts = mesh.vertices[mesh.triangles[tri]]
    q = a[:, None] * verts[:, 0] + b[:, None] * verts[:, 1] + c[:, None] * verts[:, 2]
    return q, mesh.normals[tri]

import math
from typing import Optional, Tuple

import numpy as np
import torch
from loguru import logger

from pddf.core.config import settings
from pddf.core.errors import GeometryError
from pddf.models.geometry import DEFAULT_BOX, BoundingBox
from pddf.models.render import (
    Camera,
    CurvatureImage,
    DepthVisibilityImages,
    NormalImage,
    RenderedImages,
)
from pddf.services.evaluators import FieldEvaluator
from pddf.services.field import curvature_at, curvature_pairs, surface_normal_estimate
from pddf.services.geometry import ray_box_entry_batch


def camera_frame(camera: Camera) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Right-handed look-at frame.

    Returns:
        (forward, right, up) unit vectors
    """
    position = np.asarray(camera.position, dtype=np.float64)
    forward = np.asarray(camera.look_at, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(camera.up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise GeometryError("Camera up vector is parallel to the viewing axis")
    right = right / norm
    up = np.cross(right, forward)
    return forward, right, up


def camera_rays(camera: Camera) -> Tuple[np.ndarray, np.ndarray]:
    """
    One ray per pixel centre, row-major from the top-left pixel.

    Args:
        camera: Pinhole camera

    Returns:
        (origins, unit directions), each (height * width, 3)
    """
    forward, right, up = camera_frame(camera)
    half_h = math.tan(math.radians(camera.vertical_fov) / 2.0)
    half_w = half_h * camera.width / camera.height

    cols = ((np.arange(camera.width) + 0.5) / camera.width * 2.0 - 1.0) * half_w
    rows = (1.0 - (np.arange(camera.height) + 0.5) / camera.height * 2.0) * half_h
    y, x = np.meshgrid(rows, cols, indexing="ij")
    dirs = forward + x.reshape(-1, 1) * right + y.reshape(-1, 1) * up
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.tile(np.asarray(camera.position, dtype=np.float64), (len(dirs), 1))
    return origins, dirs


def _box_queries(p: np.ndarray, v: np.ndarray, box: BoundingBox) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Move each ray origin to where it enters the box.

    Returns:
        (query points, distance travelled to them, hit mask); missing rays
        query a clamped point and are masked out by the caller
    """
    entry, hit = ray_box_entry_batch(p, v, box)
    query = np.where(hit[:, None], entry, np.clip(p, box.min, box.max))
    offset = np.where(hit, np.linalg.norm(p - query, axis=1), 0.0)
    return query, offset, hit


def render_rays(
    evaluator: FieldEvaluator,
    p: np.ndarray,
    v: np.ndarray,
    xi_threshold: float = 0.5,
    box: BoundingBox = DEFAULT_BOX,
    chunk: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Depth and visibility along arbitrary rays with one evaluator query per ray.

    Origins outside the box are queried at their box entry point and the
    travelled distance is added to the depth. Rays that miss the box get
    visibility 0. Depth is +inf wherever visibility is below the threshold.

    Args:
        evaluator: Any field evaluator
        p: (N, 3) ray origins
        v: (N, 3) ray directions
        xi_threshold: Visible-ray threshold
        box: Field domain
        chunk: Rows per evaluator call

    Returns:
        (depth, xi), each (N,) float64
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 3)
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    chunk = chunk or settings.RENDER_CHUNK
    query, offset, hit = _box_queries(p, v, box)

    depth = np.empty(len(p))
    xi = np.empty(len(p))
    with torch.no_grad():
        for start in range(0, len(p), chunk):
            sl = slice(start, start + chunk)
            out = evaluator.evaluate(
                torch.as_tensor(query[sl], dtype=evaluator.dtype),
                torch.as_tensor(v[sl], dtype=evaluator.dtype),
            )
            depth[sl] = out.depth.double().numpy()
            xi[sl] = out.xi.double().numpy()

    xi = np.where(hit, xi, 0.0)
    depth = np.where(xi >= xi_threshold, depth + offset, np.inf)
    return depth, xi


def render_depth_visibility(
    evaluator: FieldEvaluator,
    camera: Camera,
    box: BoundingBox = DEFAULT_BOX,
) -> DepthVisibilityImages:
    p, v = camera_rays(camera)
    depth, xi = render_rays(evaluator, p, v, camera.xi_threshold, box)
    shape = (camera.height, camera.width)
    return DepthVisibilityImages(
        depth=depth.reshape(shape).astype(np.float32),
        xi=xi.reshape(shape).astype(np.float32),
    )


def _visible_queries(evaluator: FieldEvaluator, camera: Camera, box: BoundingBox):
    p, v = camera_rays(camera)
    _, xi = render_rays(evaluator, p, v, camera.xi_threshold, box)
    query, _, hit = _box_queries(p, v, box)
    rows = np.flatnonzero(hit & (xi >= camera.xi_threshold))
    return query, v, rows


def _pixel_normals(evaluator: FieldEvaluator, q: torch.Tensor, v: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    jet = evaluator.jet(q, v)
    return surface_normal_estimate(jet.grad_p_depth, v)


def render_normals(
    evaluator: FieldEvaluator,
    camera: Camera,
    box: BoundingBox = DEFAULT_BOX,
) -> NormalImage:
    """
    Surface normals from the depth gradient, for pixels whose visibility
    passes the camera's threshold. Other pixels are NaN.
    """
    query, v, rows = _visible_queries(evaluator, camera, box)
    n_pixels = camera.height * camera.width
    normals = np.full((n_pixels, 3), np.nan)
    valid = np.zeros(n_pixels, dtype=bool)

    chunk = settings.RENDER_CHUNK
    for start in range(0, len(rows), chunk):
        r = rows[start:start + chunk]
        n, ok = _pixel_normals(
            evaluator,
            torch.as_tensor(query[r], dtype=evaluator.dtype),
            torch.as_tensor(v[r], dtype=evaluator.dtype),
        )
        normals[r] = n.detach().double().numpy()
        valid[r] = ok.numpy()

    logger.debug(f"Rendered normals: {int(valid.sum())}/{n_pixels} defined pixels")
    return NormalImage(
        normals=normals.reshape(camera.height, camera.width, 3),
        valid=valid.reshape(camera.height, camera.width),
    )


def normal_frame(n: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Deterministic orthonormal tangent pair for each unit normal, built
    against the coordinate axis least aligned with it.
    """
    axis = n.abs().argmin(dim=-1)
    e = torch.nn.functional.one_hot(axis, 3).to(n.dtype)
    t_x = torch.linalg.cross(n, e, dim=-1)
    t_x = t_x / t_x.norm(dim=-1, keepdim=True)
    t_y = torch.linalg.cross(n, t_x, dim=-1)
    return t_x, t_y


def _hessian_pairs(n_rows: int, dtype: torch.dtype) -> Tuple[torch.Tensor, torch.Tensor]:
    """Coordinate-axis pairs whose second derivatives fill the position Hessian, row-major."""
    eye = torch.eye(3, dtype=dtype)
    t_a = eye.repeat_interleave(3, dim=0).expand(n_rows, -1, -1)
    t_b = eye.repeat(3, 1).expand(n_rows, -1, -1)
    return t_a, t_b


def render_curvature(
    evaluator: FieldEvaluator,
    camera: Camera,
    box: BoundingBox = DEFAULT_BOX,
) -> CurvatureImage:
    """
    Mean and Gaussian curvature per visible pixel.

    One jet per visible pixel gives both the depth gradient and the full
    position Hessian of the active depth. The normal fixes a tangent frame
    and the Hessian projected onto it gives the shape tensor. Pixels with a
    degenerate gradient are NaN.
    """
    query, v, rows = _visible_queries(evaluator, camera, box)
    n_pixels = camera.height * camera.width
    curvature = np.full((n_pixels, 2), np.nan)
    valid = np.zeros(n_pixels, dtype=bool)

    chunk = settings.RENDER_CHUNK
    for start in range(0, len(rows), chunk):
        r = rows[start:start + chunk]
        q_t = torch.as_tensor(query[r], dtype=evaluator.dtype)
        v_t = torch.as_tensor(v[r], dtype=evaluator.dtype)
        jet = evaluator.jet(q_t, v_t, second_pairs=_hessian_pairs(len(r), evaluator.dtype))
        n, ok = surface_normal_estimate(jet.grad_p_depth.detach(), v_t)
        n = torch.where(ok[:, None], n, torch.zeros_like(n) + v_t)
        hessian = jet.second_dirs.detach().reshape(-1, 3, 3).transpose(1, 2)
        t_a, t_b = curvature_pairs(*normal_frame(n))
        second = torch.einsum("npi,nij,npj->np", t_b, hessian, t_a)
        c_h, c_k = curvature_at(second, n, v_t, ok)
        curvature[r, 0] = c_h.double().numpy()
        curvature[r, 1] = c_k.double().numpy()
        valid[r] = ok.numpy()

    return CurvatureImage(
        curvature=curvature.reshape(camera.height, camera.width, 2),
        valid=valid.reshape(camera.height, camera.width),
    )


def render_all(
    evaluator: FieldEvaluator,
    camera: Camera,
    maps: Tuple[str, ...] = ("depth", "xi", "normals"),
    box: BoundingBox = DEFAULT_BOX,
) -> RenderedImages:
    """
    Render the requested maps ("depth", "xi", "normals", "curvature").
    """
    images = RenderedImages()
    if "depth" in maps or "xi" in maps:
        dv = render_depth_visibility(evaluator, camera, box)
        images.depth = dv.depth if "depth" in maps else None
        images.xi = dv.xi if "xi" in maps else None
    if "normals" in maps:
        images.normals = render_normals(evaluator, camera, box).normals
    if "curvature" in maps:
        images.curvature = render_curvature(evaluator, camera, box).curvature
    return images

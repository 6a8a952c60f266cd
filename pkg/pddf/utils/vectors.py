from typing import Tuple

import numpy as np


def dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Row-wise 3-vector dot product with a fixed evaluation order, so results
    do not depend on array shape or SIMD reduction strategy.
    """
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise 3-vector cross product with a fixed evaluation order."""
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


def random_unit_vectors(n: int, rng: np.random.Generator, min_norm: float = 1e-6) -> np.ndarray:
    """
    Uniform directions on the unit sphere from normalised Gaussians.

    Args:
        n: Number of directions
        rng: Seeded generator
        min_norm: Gaussian draws shorter than this are redrawn

    Returns:
        (n, 3) unit vectors
    """
    out = rng.standard_normal((n, 3))
    norm = np.linalg.norm(out, axis=1)
    bad = norm < min_norm
    while bad.any():
        out[bad] = rng.standard_normal((int(bad.sum()), 3))
        norm = np.linalg.norm(out, axis=1)
        bad = norm < min_norm
    return out / norm[:, None]


def tangent_basis_batch(n: np.ndarray, rng: np.random.Generator, min_norm: float = 1e-3) -> Tuple[np.ndarray, np.ndarray]:
    """
    Orthonormal tangent frames for a batch of unit normals, by Gram-Schmidt
    on Gaussian draws. Draws nearly parallel to the normal (or to the first
    tangent) are redrawn.

    Args:
        n: (N, 3) unit normals
        rng: Seeded generator
        min_norm: Smallest acceptable residual after projection

    Returns:
        (t_x, t_y), each (N, 3)
    """
    n = np.asarray(n, dtype=np.float64).reshape(-1, 3)

    def _project(basis, g):
        for b in basis:
            g = g - dot(g, b)[:, None] * b
        return g

    def _draw(basis):
        g = _project(basis, rng.standard_normal(n.shape))
        norm = np.linalg.norm(g, axis=1)
        bad = norm < min_norm
        while bad.any():
            sub = [b[bad] for b in basis]
            g[bad] = _project(sub, rng.standard_normal((int(bad.sum()), 3)))
            norm = np.linalg.norm(g, axis=1)
            bad = norm < min_norm
        g = g / norm[:, None]
        # second pass removes the residual left by the first projection
        g = _project(basis, g)
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    t_x = _draw([n])
    t_y = _draw([n, t_x])
    return t_x, t_y

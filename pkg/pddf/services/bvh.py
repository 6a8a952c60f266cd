from typing import List, Tuple

import numpy as np
from loguru import logger

from pddf.models.geometry import TriangleMesh
from pddf.services.geometry import MIN_T, intersect_triangles

# Node boxes are padded so that culling can never reject the true first hit
BOX_PAD = 1e-7


class MeshBVH:
    """
    Bounding-volume hierarchy over a triangle mesh.

    Nodes are split at the centroid median of their longest axis until at
    most ``leaf_size`` triangles remain. Traversal is vectorised over the
    subset of rays that reach each node, and leaves run the same
    ray/triangle routine as the brute-force path, so both agree bit for bit.
    """

    def __init__(self, mesh: TriangleMesh, leaf_size: int = 8):
        self.mesh = mesh
        self.leaf_size = leaf_size
        self._build()

    def _build(self) -> None:
        mesh = self.mesh
        tri_verts = mesh.vertices[mesh.triangles]
        tri_lo = tri_verts.min(axis=1)
        tri_hi = tri_verts.max(axis=1)
        centroids = tri_verts.mean(axis=1)

        order = np.arange(len(mesh), dtype=np.int64)
        lo: List[np.ndarray] = []
        hi: List[np.ndarray] = []
        left: List[int] = []
        right: List[int] = []
        start: List[int] = []
        count: List[int] = []

        def new_node(s: int, e: int) -> int:
            idx = order[s:e]
            lo.append(tri_lo[idx].min(axis=0) - BOX_PAD)
            hi.append(tri_hi[idx].max(axis=0) + BOX_PAD)
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            return len(lo) - 1

        root = new_node(0, len(mesh))
        stack: List[Tuple[int, int, int]] = [(root, 0, len(mesh))]
        while stack:
            node, s, e = stack.pop()
            if e - s <= self.leaf_size:
                continue
            idx = order[s:e]
            c = centroids[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            order[s:e] = idx[np.argsort(c[:, axis], kind="stable")]
            mid = (s + e) // 2
            left[node] = new_node(s, mid)
            right[node] = new_node(mid, e)
            count[node] = 0
            stack.append((left[node], s, mid))
            stack.append((right[node], mid, e))

        self.order = order
        self.node_lo = np.asarray(lo)
        self.node_hi = np.asarray(hi)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.start = np.asarray(start, dtype=np.int64)
        self.count = np.asarray(count, dtype=np.int64)
        logger.debug(f"Built BVH with {len(lo)} nodes over {len(mesh)} triangles")

    def __len__(self) -> int:
        return int(len(self.node_lo))

    def _node_span(self, node: int, p: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.node_lo[node], self.node_hi[node]
        zero = v == 0.0
        safe = np.where(zero, 1.0, v)
        t1 = (lo - p) / safe
        t2 = (hi - p) / safe
        in_slab = (p >= lo) & (p <= hi)
        t_min = np.where(zero, np.where(in_slab, -np.inf, np.inf), np.minimum(t1, t2))
        t_max = np.where(zero, np.where(in_slab, np.inf, -np.inf), np.maximum(t1, t2))
        return t_min.max(axis=1), t_max.min(axis=1)

    def cast(self, p: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        First hit of every ray.

        Args:
            p: (N, 3) origins
            v: (N, 3) unit directions

        Returns:
            (t, triangle index); misses hold +inf and -1. Ties resolve to
            the lowest triangle index.
        """
        mesh = self.mesh
        n = len(p)
        best_t = np.full(n, np.inf)
        best_i = np.full(n, -1, dtype=np.int64)
        if len(mesh) == 0 or n == 0:
            return best_t, best_i

        stack: List[Tuple[int, np.ndarray]] = [(0, np.arange(n))]
        while stack:
            node, rays = stack.pop()
            t_enter, t_exit = self._node_span(node, p[rays], v[rays])
            keep = (t_exit >= t_enter) & (t_exit >= MIN_T) & (t_enter <= best_t[rays])
            rays = rays[keep]
            if len(rays) == 0:
                continue

            if self.left[node] >= 0:
                stack.append((int(self.right[node]), rays))
                stack.append((int(self.left[node]), rays))
                continue

            tris = self.order[self.start[node]:self.start[node] + self.count[node]]
            t, _, _ = intersect_triangles(
                p[rays, None, :], v[rays, None, :],
                mesh.v0[tris][None], mesh.e1[tris][None], mesh.e2[tris][None],
            )
            for j, tri in enumerate(tris):
                tj = t[:, j]
                cur_t = best_t[rays]
                better = (tj < cur_t) | ((tj == cur_t) & np.isfinite(tj) & (tri < best_i[rays]))
                if better.any():
                    sel = rays[better]
                    best_t[sel] = tj[better]
                    best_i[sel] = tri
        return best_t, best_i

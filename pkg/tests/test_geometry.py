import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pddf.core.errors import ConfigError, GeometryError
from pddf.models.geometry import (
    BoundingBox, OrientedPoint, PlaneShape, SphereShape, TriangleMesh, parse_analytic,
)
from pddf.services.bvh import MeshBVH
from pddf.services.geometry import (
    analytic_ddf_eval, analytic_hit_batch, analytic_hits, box_boundary_sample,
    ray_box_entry, ray_box_entry_batch, ray_box_exit_batch, ray_triangle_intersect,
    raycast_mesh, raycast_mesh_batch, raycast_mesh_brute, surface_sample, tangent_basis,
)
from pddf.utils.vectors import random_unit_vectors

TRIANGLE = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@pytest.mark.unit
class TestRayTriangle:

    def test_hit(self):
        """A ray straight down onto the triangle hits at t = 1"""
        hit = ray_triangle_intersect(np.array([0.25, 0.25, 1.0]), np.array([0.0, 0.0, -1.0]), TRIANGLE)
        assert hit is not None
        t, bary = hit
        assert t == pytest.approx(1.0)
        assert bary.sum() == pytest.approx(1.0)

    def test_miss_outside(self):
        assert ray_triangle_intersect(np.array([2.0, 2.0, 1.0]), np.array([0.0, 0.0, -1.0]), TRIANGLE) is None

    def test_miss_parallel(self):
        assert ray_triangle_intersect(np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]), TRIANGLE) is None

    def test_origin_on_surface(self):
        """Origins on the triangle count as hits at depth 0"""
        hit = ray_triangle_intersect(np.array([0.25, 0.25, 0.0]), np.array([0.0, 0.0, -1.0]), TRIANGLE)
        assert hit is not None
        assert hit[0] == 0.0

    def test_degenerate_triangle(self):
        tri = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
        assert ray_triangle_intersect(np.array([0.5, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]), tri) is None


@pytest.mark.unit
class TestMeshRaycast:

    def test_icosphere_front(self, icosphere_mesh):
        hit = raycast_mesh(icosphere_mesh, OrientedPoint(p=(0.0, 0.0, 2.0), v=(0.0, 0.0, -1.0)))
        assert hit.visible
        assert abs(hit.depth - 1.0) < 5e-3
        assert hit.normal[2] > 0.99

    def test_icosphere_away(self, icosphere_mesh):
        hit = raycast_mesh(icosphere_mesh, OrientedPoint(p=(0.0, 0.0, 2.0), v=(0.0, 0.0, 1.0)))
        assert not hit.visible
        assert hit.depth is None

    def test_icosphere_interior(self, icosphere_mesh):
        """Interior rays hit the far wall; the normal faces back along the ray"""
        hit = raycast_mesh(icosphere_mesh, OrientedPoint(p=(0.0, 0.0, 0.0), v=(1.0, 0.0, 0.0)))
        assert hit.visible
        assert abs(hit.depth - 1.0) < 5e-3
        assert hit.normal[0] < 0.0

    def test_empty_mesh(self):
        mesh = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        hits = raycast_mesh_batch(mesh, np.zeros((4, 3)), np.tile([0.0, 0.0, 1.0], (4, 1)))
        assert not hits.visible.any()

    def test_agrees_with_analytic_sphere(self, icosphere_mesh, rng):
        p = rng.uniform(-1.0, 1.0, (30_000, 3))
        p = p[np.abs(np.linalg.norm(p, axis=1) - 1.0) > 0.01]
        v = random_unit_vectors(len(p), rng)
        mesh_hits = raycast_mesh_batch(icosphere_mesh, p, v)
        exact = analytic_hit_batch(SphereShape(radius=1.0), p, v)

        # grazing rays see the facets, not the sphere
        facing = np.abs(np.sum(exact.normal * v, axis=1)) >= 0.3
        both = mesh_hits.visible & exact.visible & facing
        assert both.sum() >= 10_000
        assert np.abs(mesh_hits.depth[both] - exact.depth[both]).max() < 5e-3

    def test_bvh_matches_brute_force(self, icosphere_mesh, rng):
        """Accelerated and brute-force casts agree bit for bit"""
        p = rng.uniform(-1.5, 1.5, (1000, 3))
        v = random_unit_vectors(1000, rng)
        fast = raycast_mesh_batch(icosphere_mesh, p, v, bvh=MeshBVH(icosphere_mesh))
        slow = raycast_mesh_brute(icosphere_mesh, p, v)

        np.testing.assert_array_equal(fast.visible, slow.visible)
        np.testing.assert_array_equal(fast.depth, slow.depth)
        np.testing.assert_array_equal(fast.triangle_index, slow.triangle_index)
        np.testing.assert_array_equal(fast.normal, slow.normal)

    def test_tie_picks_lowest_triangle(self):
        """Two coincident triangles: the first one wins"""
        mesh = TriangleMesh(
            np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            np.array([[0, 1, 2], [0, 2, 1]]),
        )
        p = np.array([[0.2, 0.2, 1.0]])
        v = np.array([[0.0, 0.0, -1.0]])
        assert raycast_mesh_batch(mesh, p, v).triangle_index[0] == 0
        assert raycast_mesh_brute(mesh, p, v).triangle_index[0] == 0


@pytest.mark.unit
class TestBoundingBox:

    def test_entry_from_outside(self):
        entry = ray_box_entry(np.array([0.0, 0.0, 3.0]), np.array([0.0, 0.0, -1.0]))
        np.testing.assert_array_equal(entry, [0.0, 0.0, 1.0])

    def test_entry_missing(self):
        assert ray_box_entry(np.array([0.0, 0.0, 3.0]), np.array([0.0, 0.0, 1.0])) is None

    def test_entry_inside_is_identity(self, rng):
        p = np.zeros((5, 3))
        entry, hit = ray_box_entry_batch(p, random_unit_vectors(5, rng))
        assert hit.all()
        np.testing.assert_array_equal(entry, p)

    def test_exit_on_face(self, rng):
        p = rng.uniform(-1.0, 1.0, (200, 3))
        out = ray_box_exit_batch(p, random_unit_vectors(200, rng))
        assert np.all(np.isclose(np.abs(out).max(axis=1), 1.0))

    def test_boundary_sample(self, rng):
        p, inward = box_boundary_sample(500, rng)
        assert np.all(np.abs(p).max(axis=1) == 1.0)
        assert np.all(np.abs(inward).sum(axis=1) == 1.0)
        assert np.all(np.sum(p * inward, axis=1) < 0.0)

    def test_invalid_box(self):
        with pytest.raises(ValueError):
            BoundingBox(min=(0.0, 0.0, 0.0), max=(1.0, -1.0, 1.0))


@pytest.mark.unit
class TestAnalyticShapes:

    def test_sphere_front(self):
        hit = analytic_ddf_eval(SphereShape(radius=1.0), OrientedPoint(p=(0.0, 0.0, 2.0), v=(0.0, 0.0, -1.0)))
        assert hit.visible
        assert hit.depth == pytest.approx(1.0)
        assert hit.normal == pytest.approx((0.0, 0.0, 1.0))

    def test_sphere_grazing(self):
        hit = analytic_ddf_eval(SphereShape(radius=1.0), OrientedPoint(p=(1.0, 0.0, 2.0), v=(0.0, 0.0, -1.0)))
        assert hit.visible
        assert hit.depth == pytest.approx(2.0)
        assert hit.normal == pytest.approx((1.0, 0.0, 0.0), abs=1e-7)

    def test_plane_oblique(self):
        s = np.sin(np.pi / 4)
        hit = analytic_ddf_eval(PlaneShape(), OrientedPoint(p=(0.0, 0.0, 1.0), v=(s, 0.0, -s)))
        assert hit.visible
        assert hit.depth == pytest.approx(np.sqrt(2.0))

    def test_on_surface_depth_zero(self):
        hit = analytic_ddf_eval(SphereShape(radius=1.0), OrientedPoint(p=(0.0, 0.0, 1.0), v=(0.0, 0.0, -1.0)))
        assert hit.visible
        assert hit.depth == 0.0

    def test_on_surface_keeps_gradient(self):
        """The zero depth at the surface still differentiates like the entering branch"""
        p = torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64, requires_grad=True)
        v = torch.tensor([[0.0, 0.0, -1.0]], dtype=torch.float64)
        _, depth, _ = analytic_hits(SphereShape(radius=1.0), p, v)
        (grad,) = torch.autograd.grad(depth.sum(), p)
        np.testing.assert_allclose(grad.numpy(), [[0.0, 0.0, 1.0]], atol=1e-12)

    def test_box_from_outside(self):
        hit = analytic_ddf_eval(parse_analytic("box:0.5"), OrientedPoint(p=(0.0, 0.0, 2.0), v=(0.0, 0.0, -1.0)))
        assert hit.visible
        assert hit.depth == pytest.approx(1.5)
        assert hit.normal == pytest.approx((0.0, 0.0, 1.0))

    def test_parse_errors(self):
        with pytest.raises(ConfigError):
            parse_analytic("torus:1")
        with pytest.raises(ConfigError):
            parse_analytic("sphere:abc")

    @settings(max_examples=50, deadline=None)
    @given(
        x=st.floats(-0.8, 0.8), y=st.floats(-0.8, 0.8),
        theta=st.floats(0.0, np.pi), phi=st.floats(0.0, 2 * np.pi),
    )
    def test_sphere_hit_lies_on_surface(self, x, y, theta, phi):
        """Every visible hit point sits on the sphere"""
        v = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        p = np.array([x, y, 1.5])
        hits = analytic_hit_batch(SphereShape(radius=0.5), p[None], v[None])
        if hits.visible[0]:
            q = p + hits.depth[0] * v
            assert abs(np.linalg.norm(q) - 0.5) < 1e-9


@pytest.mark.unit
class TestSurfaceSampling:

    def test_tangent_basis_orthonormal(self, rng):
        for n in (np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])):
            t_x, t_y = tangent_basis(n, rng)
            assert abs(t_x @ t_y) < 1e-12
            assert abs(t_x @ n) < 1e-12
            assert abs(t_y @ n) < 1e-12
            assert np.linalg.norm(t_x) == pytest.approx(1.0)
            assert np.linalg.norm(t_y) == pytest.approx(1.0)

    def test_tangent_basis_deterministic(self):
        n = np.array([1.0, 0.0, 0.0])
        a = tangent_basis(n, np.random.default_rng(5))
        b = tangent_basis(n, np.random.default_rng(5))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_unit_square_mean(self, rng):
        mesh = TriangleMesh(
            np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]]),
            np.array([[0, 1, 2], [0, 2, 3]]),
        )
        q, _ = surface_sample(mesh, 100_000, rng)
        np.testing.assert_allclose(q.mean(axis=0), [0.5, 0.5, 0.0], atol=0.01)

    def test_single_triangle_plane(self, rng):
        mesh = TriangleMesh(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), np.array([[0, 1, 2]]))
        q, n = surface_sample(mesh, 1000, rng)
        assert np.abs(q.sum(axis=1) - 1.0).max() < 1e-9
        np.testing.assert_allclose(n, np.tile(mesh.normals[0], (1000, 1)))

    def test_area_weighting(self, rng):
        """Areas 1 and 3: three quarters of the samples land on the larger triangle"""
        mesh = TriangleMesh(
            np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                      [0.0, 0.0, 5.0], [6.0, 0.0, 5.0], [0.0, 1.0, 5.0]]),
            np.array([[0, 1, 2], [3, 4, 5]]),
        )
        q, _ = surface_sample(mesh, 100_000, rng)
        assert abs(np.mean(q[:, 2] > 2.5) - 0.75) < 0.01

    def test_zero_area(self, rng):
        mesh = TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
        with pytest.raises(GeometryError):
            surface_sample(mesh, 10, rng)

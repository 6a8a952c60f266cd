import os

import numpy as np
import pytest

from pddf.core.errors import DatasetFormatError, GeometryError
from pddf.models.geometry import SphereShape, TriangleMesh
from pddf.models.samples import SAMPLE_TYPE_ORDER, DatasetSpec, SampleType
from pddf.services.sampler import (
    AnalyticOracle, MeshOracle, build_dataset, build_held_out, draw_samples, generate_dataset,
)
from pddf.storage.dataset_file import RECORD_SIZE, read_dataset, write_dataset


@pytest.fixture
def sphere_oracle():
    return AnalyticOracle(SphereShape(radius=1.0))


def _spec(**counts):
    return DatasetSpec(counts={SampleType(k): v for k, v in counts.items()}, seed=11)


@pytest.mark.unit
class TestDrawSamples:

    def test_surface_samples_on_sphere(self, sphere_oracle, rng):
        samples = draw_samples(sphere_oracle, SampleType.S, 500, DatasetSpec(), rng)
        assert len(samples) == 500
        assert np.abs(np.linalg.norm(samples.p, axis=1) - 1.0).max() < 1e-9
        assert np.all(samples.kind == SampleType.S.code)

    def test_offset_samples(self, sphere_oracle, rng):
        """O-type points sit epsilon_o off the surface"""
        samples = draw_samples(sphere_oracle, SampleType.O, 500, DatasetSpec(boundary_bias=0.0), rng)
        assert np.abs(np.abs(np.linalg.norm(samples.p, axis=1) - 1.0) - 0.05).max() < 1e-9

    def test_bounding_samples_look_inward(self, sphere_oracle, rng):
        samples = draw_samples(sphere_oracle, SampleType.B, 500, DatasetSpec(), rng)
        p = samples.p
        assert np.all(np.isclose(np.abs(p).max(axis=1), 1.0, rtol=0.0, atol=0.0))
        axis = np.argmax(np.abs(p), axis=1)
        inward = -np.sign(p[np.arange(len(p)), axis])
        assert np.all(samples.v[np.arange(len(p)), axis] * inward > 0.0)

    @pytest.mark.parametrize("kind", [SampleType.A, SampleType.T, SampleType.O])
    def test_boundary_bias_moves_to_box_looking_inward(self, kind, rng):
        oracle = AnalyticOracle(SphereShape(radius=0.5))
        samples = draw_samples(oracle, kind, 300, DatasetSpec(boundary_bias=1.0), rng)
        p, rows = samples.p, np.arange(len(samples))
        np.testing.assert_allclose(np.abs(p).max(axis=1), 1.0, rtol=0.0, atol=1e-9)
        axis = np.argmax(np.abs(p), axis=1)
        inward = -np.sign(p[rows, axis])
        assert np.all(samples.v[rows, axis] * inward > 0.0)
        hits = oracle.cast(p, samples.v)
        np.testing.assert_array_equal(samples.visible.astype(bool), hits.visible)

    def test_boundary_bias_fraction(self, rng):
        oracle = AnalyticOracle(SphereShape(radius=0.5))
        samples = draw_samples(oracle, SampleType.T, 4000, DatasetSpec(boundary_bias=0.1), rng)
        on_box = np.isclose(np.abs(samples.p).max(axis=1), 1.0, rtol=0.0, atol=1e-9)
        assert 0.08 < on_box.mean() < 0.12

    def test_at_surface_samples_are_visible(self, sphere_oracle, rng):
        """A-type rays point back at their surface origin"""
        samples = draw_samples(sphere_oracle, SampleType.A, 500, DatasetSpec(), rng)
        assert samples.visible.all()

    def test_uniform_visibility_fraction(self, sphere_oracle, rng):
        samples = draw_samples(sphere_oracle, SampleType.U, 100_000, DatasetSpec(), rng)
        lo, hi = -1.0, 1.0
        reference_rng = np.random.default_rng(99)
        p = lo + reference_rng.random((1_000_000, 3)) * (hi - lo)
        v = reference_rng.standard_normal((1_000_000, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        reference = sphere_oracle.cast(p, v).visible.mean()
        assert abs(samples.visible.mean() - reference) < 0.02

    def test_labels_match_oracle(self, sphere_oracle, rng):
        samples = draw_samples(sphere_oracle, SampleType.T, 200, DatasetSpec(), rng)
        hits = sphere_oracle.cast(samples.p, samples.v)
        np.testing.assert_array_equal(samples.visible.astype(bool), hits.visible)
        np.testing.assert_array_equal(samples.depth, hits.depth)

    def test_zero_count(self, sphere_oracle, rng):
        assert len(draw_samples(sphere_oracle, SampleType.U, 0, DatasetSpec(), rng)) == 0

    def test_empty_mesh_surface_types(self, rng):
        oracle = MeshOracle(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)))
        with pytest.raises(GeometryError):
            draw_samples(oracle, SampleType.S, 10, DatasetSpec(), rng)


@pytest.mark.unit
class TestDatasets:

    def test_counts_in_canonical_order(self, sphere_oracle):
        samples = generate_dataset(sphere_oracle, _spec(U=30, A=20, B=10, S=10, T=10, O=10))
        assert len(samples) == 90
        assert list(np.unique(samples.kind)) == list(range(6))
        assert np.all(np.diff(samples.kind.astype(int)) >= 0)

    def test_empty_dataset_file(self, sphere_oracle, temp_dir):
        path = os.path.join(temp_dir, "empty.ddfd")
        build_dataset(sphere_oracle, _spec(U=0, A=0, B=0, S=0, T=0, O=0), path)
        header, samples = read_dataset(path)
        assert header["count"] == 0
        assert header["record_size"] == RECORD_SIZE == 42
        assert len(samples) == 0

    def test_round_trip(self, sphere_oracle, temp_dir):
        path = os.path.join(temp_dir, "sphere.ddfd")
        written = build_dataset(sphere_oracle, _spec(U=40, A=40, B=20, S=20, T=20, O=20), path)
        header, loaded = read_dataset(path)
        assert header["counts"]["U"] == 40
        for name in ("p", "v", "kind", "visible", "depth", "normal"):
            np.testing.assert_array_equal(getattr(loaded, name), getattr(written, name))

    def test_same_seed_same_bytes(self, sphere_oracle, temp_dir):
        spec = _spec(U=50, A=50, B=20, S=20, T=20, O=20)
        a, b = os.path.join(temp_dir, "a.ddfd"), os.path.join(temp_dir, "b.ddfd")
        build_dataset(sphere_oracle, spec, a)
        build_dataset(sphere_oracle, spec, b)
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_held_out_differs(self, sphere_oracle):
        spec = _spec(U=50, A=0, B=0, S=0, T=0, O=0)
        train = generate_dataset(sphere_oracle, spec)
        held_out = build_held_out(sphere_oracle, spec)
        assert not np.allclose(train.p, held_out.p)

    def test_truncated_file(self, sphere_oracle, temp_dir):
        path = os.path.join(temp_dir, "bad.ddfd")
        samples = generate_dataset(sphere_oracle, _spec(U=10, A=0, B=0, S=0, T=0, O=0))
        write_dataset(path, samples, {})
        with open(path, "rb") as f:
            data = f.read()
        with open(path, "wb") as f:
            f.write(data[:-5])
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_bad_magic(self, temp_dir):
        path = os.path.join(temp_dir, "junk.ddfd")
        with open(path, "wb") as f:
            f.write(b"not a dataset\n")
        with pytest.raises(DatasetFormatError):
            read_dataset(path)

    def test_mesh_oracle(self, icosphere_mesh):
        spec = _spec(U=100, A=100, B=0, S=50, T=50, O=50)
        samples = generate_dataset(MeshOracle(icosphere_mesh), spec)
        assert samples.counts() == {t: spec.counts[t] for t in SAMPLE_TYPE_ORDER}
        visible = samples.visible.astype(bool)
        assert np.all(np.abs(np.linalg.norm(samples.normal[visible], axis=1) - 1.0) < 1e-9)

"""
Desk-scale sphere fit and the geometry recovered from it.

Opt-in: pytest -m slow. The fit takes tens of minutes on a desktop CPU and
is shared by every test in this module.
"""
import os

import numpy as np
import pytest
import torch

from pddf.core.config import load_pipeline_config
from pddf.models.geometry import SphereShape
from pddf.models.samples import SAMPLE_TYPE_ORDER
from pddf.services.evaluators import AnalyticEvaluator, NetworkEvaluator
from pddf.services.extract import fit_vstar, sample_point_cloud, udf_query
from pddf.services.renderer import render_curvature, render_normals
from pddf.services.sampler import AnalyticOracle, build_held_out, generate_dataset
from pddf.services.trainer import fit_shape
from pddf.services.validators import run_validation

DESK_CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs", "desk.toml")
RADIUS = 0.9

pytestmark = [pytest.mark.slow, pytest.mark.acceptance]


@pytest.fixture(scope="module")
def desk_config():
    return load_pipeline_config(DESK_CONFIG)


@pytest.fixture(scope="module")
def sphere_shape():
    return SphereShape(radius=RADIUS)


@pytest.fixture(scope="module")
def fitted(desk_config, sphere_shape):
    """(evaluator, training report) for the desk-scale sphere"""
    torch.set_num_threads(os.cpu_count() or 1)
    oracle = AnalyticOracle(sphere_shape)
    samples = generate_dataset(oracle, desk_config.dataset).astype(np.float32)
    held_out = build_held_out(oracle, desk_config.dataset, counts={t: 5000 for t in SAMPLE_TYPE_ORDER})
    model, report = fit_shape(samples, desk_config.train, desk_config.field, held_out=held_out)
    model.eval()
    return NetworkEvaluator(model), report


@pytest.fixture(scope="module")
def reference(sphere_shape):
    return AnalyticEvaluator(sphere_shape)


class TestFit:

    def test_held_out_depth(self, fitted):
        _, report = fitted
        assert report.held_out["A"]["l1"] < 0.03

    def test_held_out_visibility(self, fitted):
        _, report = fitted
        counts = np.array([m["count"] for m in report.held_out.values()])
        bce = np.array([m["bce"] for m in report.held_out.values()])
        assert float((bce * counts).sum() / counts.sum()) < 0.1


class TestRecoveredGeometry:

    def test_normals(self, fitted, reference, desk_config):
        learned = render_normals(fitted[0], desk_config.camera)
        exact = render_normals(reference, desk_config.camera)
        both = learned.valid & exact.valid
        cos = np.clip(np.sum(learned.normals[both] * exact.normals[both], axis=-1), -1.0, 1.0)
        assert np.degrees(np.arccos(cos)).mean() < 10.0

    def test_mean_curvature(self, fitted, reference, desk_config):
        learned = render_curvature(fitted[0], desk_config.camera)
        exact = render_curvature(reference, desk_config.camera)
        both = learned.valid & exact.valid
        median = float(np.median(learned.mean[both]))
        assert abs(median - 2.0 / RADIUS) < 0.25 * 2.0 / RADIUS

    def test_field_properties(self, fitted, desk_config):
        reports = {r.name: r for r in run_validation(fitted[0], ["eikonal", "gradnorm", "gradconsistency",
                                                                 "viewconsistency"], desk_config.validation)}
        assert reports["eikonal"].mean < 0.1
        assert reports["gradnorm"].violation_fraction < 0.05
        assert reports["gradconsistency"].median < 0.1
        assert reports["viewconsistency"].violation_fraction < 0.05


class TestExtraction:

    def test_udf_and_closest_direction(self, fitted, desk_config):
        evaluator = fitted[0]
        vstar = fit_vstar(evaluator, desk_config.vstar)
        rng = np.random.default_rng(17)
        p = rng.uniform(-1.0, 1.0, (3000, 3))
        r = np.linalg.norm(p, axis=1)
        p, r = p[r > 0.05][:1000], r[r > 0.05][:1000]

        result = udf_query(evaluator, vstar, p, desk_config.compose)
        assert np.abs(result.udf - np.abs(r - RADIUS)).mean() < 0.05

        toward = np.where((r > RADIUS)[:, None], -p, p) / r[:, None]
        cos = np.clip(np.sum(result.v_star * toward, axis=1), -1.0, 1.0)
        assert np.mean(np.degrees(np.arccos(cos)) <= 10.0) >= 0.95

    def test_point_cloud_hops(self, fitted, desk_config):
        """Three projection hops are at least as accurate as one"""
        evaluator = fitted[0]
        config = desk_config.point_cloud.model_copy(update={"compose": desk_config.compose})
        errors = {}
        for hops in (3, 1):
            cloud = sample_point_cloud(evaluator, config.model_copy(update={"hops": hops}),
                                       np.random.default_rng(desk_config.seed))
            errors[hops] = float(np.abs(np.linalg.norm(cloud.points, axis=1) - RADIUS).mean())
        assert errors[3] < 0.02
        assert errors[1] >= errors[3] - 1e-3

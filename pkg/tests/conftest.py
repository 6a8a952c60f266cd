import os
import shutil
import tempfile

import numpy as np
import pytest
import torch

# Test environment: quiet logging, no log or metrics files
os.environ["PDDF_LOG_LEVEL"] = "WARNING"
os.environ["PDDF_LOG_FILE_PATH"] = ""
os.environ["PDDF_METRICS_FILE_PATH"] = ""
os.environ["PDDF_THREADS"] = "1"

from pddf.models.field import SirenConfig  # noqa: E402
from pddf.models.geometry import BoxShape, PlaneShape, SphereShape  # noqa: E402
from pddf.services.evaluators import AnalyticEvaluator, NetworkEvaluator  # noqa: E402
from pddf.services.field import init_siren  # noqa: E402


@pytest.fixture(autouse=True)
def single_thread():
    """Fixed intra-op thread count so reductions are reproducible."""
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng():
    """Seeded generator"""
    return np.random.default_rng(1234)


@pytest.fixture
def unit_sphere():
    return SphereShape(radius=1.0)


@pytest.fixture
def sphere_evaluator(unit_sphere):
    """Exact field of the unit sphere at the origin"""
    return AnalyticEvaluator(unit_sphere)


@pytest.fixture
def plane_evaluator():
    """Exact field of the plane z = 0"""
    return AnalyticEvaluator(PlaneShape(point=(0.0, 0.0, 0.0), normal=(0.0, 0.0, 1.0)))


@pytest.fixture
def box_evaluator():
    return AnalyticEvaluator(BoxShape(min=(-0.5, -0.5, -0.5), max=(0.5, 0.5, 0.5)))


@pytest.fixture
def tiny_config():
    """Two 16-wide layers in float64, for derivative checks"""
    return SirenConfig(hidden_sizes=[16, 16], omega_0=1.0, seed=3, dtype="float64")


@pytest.fixture
def tiny_network(tiny_config):
    return init_siren(tiny_config)


@pytest.fixture
def tiny_evaluator(tiny_network):
    return NetworkEvaluator(tiny_network)


@pytest.fixture
def icosphere_mesh():
    """Unit icosphere with 4 subdivisions"""
    from pddf.storage.mesh_file import icosphere

    return icosphere(subdivisions=4, radius=1.0)


@pytest.fixture
def temp_dir():
    """Temporary output directory, removed afterwards"""
    path = tempfile.mkdtemp()
    yield path
    shutil.rmtree(path)

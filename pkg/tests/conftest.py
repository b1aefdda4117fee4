"""
Shared fixtures for the SGP test suite.

Long end-to-end runs are marked ``slow`` and only run with ``--runslow``.
"""
import os
import sys

import numpy as np
import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from models.dataset import ground_truth_audit
from models.point_cloud import PointCloud
from services.datagen import sample_box, sample_plane, sample_sphere


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long end-to-end acceptance run")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def compact_object(seed: int = 0, count: int = 600) -> PointCloud:
    """Box, sphere and floor patch inside roughly one cubic meter, two meters in front of the origin."""
    rng = np.random.default_rng(seed)
    center = np.array([0.0, 0.0, 2.0])
    rotation = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    if np.linalg.det(rotation) < 0:
        rotation[:, 0] *= -1.0
    n_box, n_sphere = count // 2, count // 4
    parts = [
        sample_box(center + [-0.2, 0.0, 0.0], np.array([0.15, 0.25, 0.1]), rotation, n_box, rng),
        sample_sphere(center + [0.25, 0.15, 0.1], 0.15, n_sphere, rng),
        sample_plane(center + [0.0, -0.35, 0.0], np.array([0.1, 1.0, 0.2]), 0.6,
                     count - n_box - n_sphere, rng),
    ]
    return PointCloud(np.concatenate(parts))


@pytest.fixture
def object_cloud():
    return compact_object()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def clean_audit():
    """Every test starts with an empty ground-truth audit log."""
    ground_truth_audit.reset()
    yield
    ground_truth_audit.reset()

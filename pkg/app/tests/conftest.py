"""
Shared fixtures for the trace FEM test suite.
"""

import numpy as np
import pytest

from app.config.experiments import UNIT_BOX
from app.services.level_set_service import extract_surface, interpolate_levelset
from app.services.mesh_service import build_kuhn_mesh


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: convergence studies on finer meshes")


def unit_sphere(x, t):
    return np.linalg.norm(x, axis=1) - 1.0


@pytest.fixture(scope="session")
def coarse_mesh():
    """[-2, 2]^3 with h = 1/2."""
    return build_kuhn_mesh(UNIT_BOX, 0.5)


@pytest.fixture(scope="session")
def sphere_mesh():
    """[-2, 2]^3 with h = 1/4."""
    return build_kuhn_mesh(UNIT_BOX, 0.25)


@pytest.fixture(scope="session")
def sphere_field(sphere_mesh):
    return interpolate_levelset(unit_sphere, sphere_mesh, 0.0)


@pytest.fixture(scope="session")
def sphere_surface(sphere_field):
    return extract_surface(sphere_field)

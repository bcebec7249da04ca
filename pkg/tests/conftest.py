"""
Shared fixtures for the test suite
"""
import numpy as np
import pytest

from pdafem.fem.mesh import Domain, NEUMANN, initial_mesh, uniform_refine, with_boundary_labels


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the convergence-rate experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long convergence-rate runs (enable with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def square_mesh():
    """Two triangles on (-1,1)^2, Dirichlet boundary"""
    return initial_mesh(Domain.UNIT_SQUARE_SYM)


@pytest.fixture
def lshape_mesh():
    return initial_mesh(Domain.LSHAPE)


@pytest.fixture
def fine_square():
    return uniform_refine(initial_mesh(Domain.UNIT_SQUARE_SYM), 4)


@pytest.fixture
def neumann_square():
    return with_boundary_labels(uniform_refine(initial_mesh(Domain.UNIT_SQUARE_SYM), 3), NEUMANN)


@pytest.fixture
def fine_lshape():
    return uniform_refine(initial_mesh(Domain.LSHAPE), 3)

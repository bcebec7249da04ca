"""
Tests for the composite quadrature
"""
import numpy as np
import pytest

from pdafem.core.config import settings
from pdafem.fem import quadrature
from pdafem.fem.mesh import uniform_refine
from pdafem.fem.quadrature import (
    composite_rule, element_integrals, interface_elements, l2_norm, point_elements, refinement_levels,
)


@pytest.mark.parametrize("levels", [0, 1, 2, 3])
def test_weights_sum_to_one(levels):
    bary, weights = composite_rule(levels)
    assert len(weights) == 7 * 4 ** levels
    assert weights.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(bary.sum(axis=1), 1.0)
    assert (bary >= -1e-15).all()


@pytest.mark.parametrize("levels", [0, 2])
def test_degree_five_exact(square_mesh, levels):
    mesh = uniform_refine(square_mesh, 1)
    integrals = element_integrals(
        mesh, lambda x, bary, el: x[..., 0] ** 2 * x[..., 1] ** 2 + x[..., 0] ** 5, levels
    )
    assert integrals.sum() == pytest.approx(4.0 / 9.0, abs=1e-13)


def test_vector_integrand(square_mesh):
    integrals = element_integrals(square_mesh, lambda x, bary, el: x)
    assert integrals.shape == (2, 2)
    # the centroids times the areas
    expected = square_mesh.areas[:, None] * square_mesh.vertex_coordinates.mean(axis=1)
    assert np.allclose(integrals, expected)


def test_per_element_levels_match(fine_square, rng):
    levels = rng.integers(0, 3, fine_square.n_elements)

    def f(x, bary, el):
        return x[..., 0] ** 3 * x[..., 1] ** 2 + x[..., 0] * x[..., 1] ** 4 + 1.0

    mixed = element_integrals(fine_square, f, levels)
    fine = element_integrals(fine_square, f, 3)
    assert np.allclose(mixed, fine, rtol=0.0, atol=1e-13)


def test_threaded_chunks_agree(fine_square, monkeypatch):
    def f(x, bary, el):
        return np.sin(x[..., 0] + 2.0 * x[..., 1])

    serial = element_integrals(fine_square, f, 1)
    monkeypatch.setattr(quadrature, "CHUNK_SIZE", 5)
    monkeypatch.setattr(settings, "AFEM_THREADS", 4)
    threaded = element_integrals(fine_square, f, 1)
    assert np.allclose(serial, threaded, rtol=1e-14, atol=1e-15)


def test_interface_and_point_elements(square_mesh):
    fine_square = uniform_refine(square_mesh, 8)
    circle = interface_elements(fine_square, lambda x: np.hypot(x[..., 0], x[..., 1]) - 0.5)
    assert circle.any() and not circle.all()
    corner = point_elements(fine_square, (1.0, 1.0))
    assert corner.sum() >= 1
    levels = refinement_levels(corner, 2)
    assert set(np.unique(levels)) <= {0, 2}


def test_subdivision_on_interface_elements(square_mesh):
    fine_square = uniform_refine(square_mesh, 8)

    def indicator(x, bary, el):
        return (np.hypot(x[..., 0], x[..., 1]) < 0.5).astype(float)

    mask = interface_elements(fine_square, lambda x: np.hypot(x[..., 0], x[..., 1]) - 0.5)
    fine_err = abs(element_integrals(fine_square, indicator, refinement_levels(mask, 3)).sum() - np.pi / 4)
    assert fine_err < 2e-2


def test_l2_norm(square_mesh):
    assert l2_norm(square_mesh, lambda x, bary, el: np.ones(x.shape[:-1])) == pytest.approx(2.0)

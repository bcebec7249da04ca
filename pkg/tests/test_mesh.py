"""
Tests for triangulations, bisection and marking
"""
import numpy as np
import pytest

from pdafem.core.exceptions import MeshError, ValidationError
from pdafem.fem.mesh import (
    DIRICHLET, NEUMANN, Domain, MarkedSet, Triangulation, dorfler_mark, initial_mesh,
    mesh_sizes, read_mesh, refine, uniform_refine, with_boundary_labels, write_mesh,
)


class TestInitialMeshes:

    def test_square(self, square_mesh):
        assert square_mesh.n_nodes == 4
        assert square_mesh.n_elements == 2
        assert square_mesh.areas.sum() == pytest.approx(4.0)
        assert square_mesh.check_conformity()
        assert (square_mesh.boundary_labels == DIRICHLET).all()

    def test_lshape(self, lshape_mesh):
        assert lshape_mesh.n_nodes == 8
        assert lshape_mesh.n_elements == 6
        assert lshape_mesh.areas.sum() == pytest.approx(3.0)
        assert lshape_mesh.check_conformity()

    def test_refinement_edges_are_paired(self, lshape_mesh):
        # the refinement edge (opposite local vertex 0) of every element is shared
        ref_edges = lshape_mesh.element_edges[:, 0]
        counts = np.bincount(ref_edges)
        assert (counts[ref_edges] == 2).all()

    def test_clockwise_element_rejected(self):
        with pytest.raises(MeshError):
            Triangulation(
                nodes=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                elements=np.array([[0, 2, 1]]),
                boundary=np.array([[0, 1], [1, 2], [2, 0]]),
                boundary_labels=np.array(["D", "D", "D"])
            )

    def test_bad_label_rejected(self, square_mesh):
        with pytest.raises(MeshError):
            with_boundary_labels(square_mesh, "X")

    def test_callable_labels(self, square_mesh):
        mesh = with_boundary_labels(square_mesh, lambda mid: np.where(mid[:, 1] < -0.5, NEUMANN, DIRICHLET))
        assert (mesh.boundary_labels == NEUMANN).sum() == 1


class TestRefine:

    def test_closure_bisects_neighbour(self, square_mesh):
        refined = refine(square_mesh, [0])
        assert refined.n_elements == 4
        assert refined.n_nodes == 5
        assert refined.check_conformity()
        assert np.allclose(refined.nodes[4], [0.0, 0.0])

    def test_uniform_counts(self, square_mesh, lshape_mesh):
        assert uniform_refine(square_mesh, 2).n_elements == 8
        assert uniform_refine(square_mesh, 2).n_nodes == 9
        once = uniform_refine(lshape_mesh, 1)
        assert once.n_nodes == 11
        assert once.n_elements == 12

    def test_area_and_orientation_preserved(self, lshape_mesh):
        mesh = uniform_refine(lshape_mesh, 4)
        assert mesh.areas.sum() == pytest.approx(3.0)
        assert (mesh.signed_areas > 0).all()

    def test_random_adaptive_sequence_stays_conforming(self, lshape_mesh, rng):
        mesh = lshape_mesh
        for _ in range(8):
            marked = np.flatnonzero(rng.random(mesh.n_elements) < 0.2)
            if marked.size == 0:
                marked = np.array([0])
            finer = refine(mesh, marked)
            assert finer.check_conformity()
            assert finer.areas.sum() == pytest.approx(3.0)
            # every marked element has been bisected
            children = np.bincount(finer.element_parents, minlength=mesh.n_elements)
            assert (children[marked] >= 2).all()
            mesh = finer

    def test_new_nodes_are_parent_midpoints(self, square_mesh):
        coarse = uniform_refine(square_mesh, 3)
        fine = refine(coarse, [0, 3, 5])
        new = fine.nodes[coarse.n_nodes:]
        expected = coarse.nodes[fine.node_parents].mean(axis=1)
        assert np.allclose(new, expected)

    def test_generation_increases(self, square_mesh):
        mesh = uniform_refine(square_mesh, 3)
        assert mesh.generation.min() >= 3

    def test_boundary_labels_inherited(self, square_mesh):
        mesh = with_boundary_labels(square_mesh, NEUMANN)
        fine = uniform_refine(mesh, 4)
        assert (fine.boundary_labels == NEUMANN).all()
        assert fine.check_conformity()
        boundary_length = fine.edge_lengths[fine.boundary_edge_index].sum()
        assert boundary_length == pytest.approx(8.0)

    def test_empty_marking_returns_same_mesh(self, square_mesh):
        assert refine(square_mesh, []) is square_mesh

    def test_out_of_range_index(self, square_mesh):
        with pytest.raises(ValidationError):
            refine(square_mesh, [5])

    def test_accepts_marked_set(self, square_mesh):
        refined = refine(square_mesh, MarkedSet(indices=np.array([1])))
        assert refined.n_elements == 4


class TestDorflerMark:

    def test_single_dominant(self):
        marked = dorfler_mark(np.array([3.0, 2.0, 1.0]), 0.5)
        assert marked.to_set() == {0}

    def test_ties_pick_smaller_index(self):
        marked = dorfler_mark(np.ones(4), 0.5)
        assert marked.to_set() == {0}

    def test_single_positive(self):
        marked = dorfler_mark(np.array([0.0, 0.0, 5.0]), 0.9)
        assert marked.to_set() == {2}
        assert 2 in marked

    def test_all_zero_converged(self):
        marked = dorfler_mark(np.zeros(5), 0.5)
        assert len(marked) == 0
        assert marked.converged

    def test_bulk_criterion_and_minimality(self, rng):
        eta = rng.random(200)
        theta = 0.6
        marked = dorfler_mark(eta, theta)
        sq = eta ** 2
        assert sq[marked.indices].sum() >= theta ** 2 * sq.sum()
        # dropping the smallest marked indicator breaks the criterion
        smallest = marked.indices[np.argmin(sq[marked.indices])]
        assert sq[marked.indices].sum() - sq[smallest] < theta ** 2 * sq.sum()

    @pytest.mark.parametrize("theta", [0.0, 1.0, -0.1, 1.5])
    def test_invalid_theta(self, theta):
        with pytest.raises(ValidationError):
            dorfler_mark(np.ones(3), theta)

    def test_negative_indicator(self):
        with pytest.raises(ValidationError):
            dorfler_mark(np.array([1.0, -1.0]), 0.5)


class TestSizesAndFiles:

    def test_mesh_sizes(self, square_mesh):
        h, hbar = mesh_sizes(square_mesh)
        assert np.allclose(h, 2.0 * np.sqrt(2.0))
        assert hbar == pytest.approx(0.5)

    def test_round_trip(self, lshape_mesh, tmp_path):
        mesh = with_boundary_labels(uniform_refine(lshape_mesh, 3), NEUMANN)
        path = write_mesh(mesh, tmp_path / "mesh.txt")
        back = read_mesh(path)
        assert np.array_equal(back.nodes, mesh.nodes)
        assert np.array_equal(back.elements, mesh.elements)
        assert np.array_equal(back.boundary, mesh.boundary)
        assert np.array_equal(back.boundary_labels, mesh.boundary_labels)

    def test_read_malformed(self, tmp_path):
        path = tmp_path / "broken.txt"
        path.write_text("nodes 2\n0 0\n")
        with pytest.raises(MeshError):
            read_mesh(path)

    def test_read_missing(self, tmp_path):
        with pytest.raises(MeshError):
            read_mesh(tmp_path / "missing.txt")

    def test_domain_enum(self):
        assert initial_mesh("lshape").n_elements == 6
        assert Domain("unit_square_sym") == Domain.UNIT_SQUARE_SYM

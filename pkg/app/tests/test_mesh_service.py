"""
Tests for the background mesh builder and its queries.
"""

import math

import numpy as np
import pytest

from app.services.mesh_service import (
    MeshError,
    build_kuhn_mesh,
    build_mesh,
    p1_basis_gradients,
    tet_basis_gradients,
)

UNIT_CUBE = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))


class TestKuhnMesh:
    """Counts, orientation, tiling and shape regularity."""

    def test_single_cube(self):
        mesh = build_kuhn_mesh(UNIT_CUBE, 1.0)
        assert mesh.n_vertices == 8
        assert mesh.n_tets == 6
        assert mesh.tet_volumes().sum() == pytest.approx(1.0, abs=1e-14)

    def test_counts_on_experiment_box(self, coarse_mesh):
        assert coarse_mesh.n_vertices == 729
        assert coarse_mesh.n_tets == 3072
        assert coarse_mesh.shape == (8, 8, 8)

    def test_volumes_positive_and_tile_box(self, coarse_mesh):
        volumes = coarse_mesh.tet_volumes()
        assert np.all(volumes > 0.0)
        assert volumes.sum() == pytest.approx(64.0, rel=1e-12)
        np.testing.assert_allclose(volumes, 0.5 ** 3 / 6.0, rtol=1e-12)

    def test_every_tet_contains_main_diagonal(self):
        mesh = build_kuhn_mesh(UNIT_CUBE, 1.0)
        # Corner (0,0,0) is vertex 0 and (1,1,1) is vertex 7
        for tet in mesh.tets:
            assert 0 in tet and 7 in tet

    def test_shape_regularity_independent_of_h(self):
        coarse = build_kuhn_mesh(UNIT_CUBE, 1.0)
        fine = build_kuhn_mesh(UNIT_CUBE, 0.5)
        assert coarse.shape_regularity() == pytest.approx(fine.shape_regularity(), rel=1e-12)
        assert coarse.shape_ratios().min() > 0.0

    def test_vertex_tet_map_is_inverse(self, coarse_mesh):
        for vertex in (0, 100, 364, 728):
            tets = coarse_mesh.tets_of(vertex)
            expected = np.flatnonzero(np.any(coarse_mesh.tets == vertex, axis=1))
            np.testing.assert_array_equal(tets, expected)

    def test_interior_vertex_has_24_tets(self, coarse_mesh):
        # Centre of the box, vertex (4, 4, 4)
        centre = (4 * 9 + 4) * 9 + 4
        np.testing.assert_allclose(coarse_mesh.vertices[centre], 0.0)
        assert coarse_mesh.tets_of(centre).size == 24

    def test_neighbours_include_the_vertex(self, coarse_mesh):
        neighbours = coarse_mesh.neighbours_of(np.array([0]))
        assert 0 in neighbours
        assert np.all(np.diff(neighbours) > 0)

    def test_max_diameter(self):
        mesh = build_kuhn_mesh(UNIT_CUBE, 0.5)
        assert mesh.max_diameter == pytest.approx(0.5 * math.sqrt(3.0))

    def test_non_multiple_side_rejected(self):
        with pytest.raises(MeshError):
            build_kuhn_mesh(UNIT_CUBE, 0.3)

    def test_non_positive_h_rejected(self):
        with pytest.raises(MeshError):
            build_kuhn_mesh(UNIT_CUBE, 0.0)


class TestBasisGradients:
    """P1 barycentric gradients."""

    @pytest.fixture
    def reference_tet(self):
        vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        return build_mesh(vertices, np.array([[0, 1, 2, 3]]))

    def test_reference_tet(self, reference_tet):
        grads = p1_basis_gradients(reference_tet, 0)
        expected = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(grads, expected, atol=1e-14)

    def test_gradients_sum_to_zero(self, coarse_mesh):
        grads = tet_basis_gradients(coarse_mesh.vertices[coarse_mesh.tets[:50]])
        np.testing.assert_allclose(grads.sum(axis=1), 0.0, atol=1e-12)

    def test_linear_function_reproduced(self, coarse_mesh):
        rng = np.random.default_rng(7)
        a = rng.normal(size=3)
        values = coarse_mesh.vertices @ a + 0.5
        tet_ids = rng.integers(0, coarse_mesh.n_tets, size=20)
        for tet in tet_ids:
            grads = p1_basis_gradients(coarse_mesh, int(tet))
            np.testing.assert_allclose(values[coarse_mesh.tets[tet]] @ grads, a, atol=1e-12)

    def test_out_of_range_tet(self, reference_tet):
        with pytest.raises(MeshError):
            p1_basis_gradients(reference_tet, 1)

    def test_degenerate_tet(self):
        flat = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
        with pytest.raises(MeshError):
            build_mesh(flat, np.array([[0, 1, 2, 3]]))

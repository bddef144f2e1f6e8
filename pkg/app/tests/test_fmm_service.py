"""
Tests for the fast marching distance and extension.
"""

import math

import numpy as np
import pytest

from app.services.fmm_service import (
    ACTIVE,
    FINISHED,
    UNKNOWN,
    ExtensionError,
    NarrowBandState,
    _simplex_candidate,
    band_table,
    extend,
    init_band,
    march,
)
from app.services.level_set_service import cut_strip, extract_surface, interpolate_levelset
from app.services.mesh_service import build_kuhn_mesh, build_mesh

UNIT_CUBE = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
TOL = 1e-12


@pytest.fixture(scope="module")
def plane_setup():
    """Plane z = 0.3 in [0, 1]^3 with h = 1/4."""
    mesh = build_kuhn_mesh(UNIT_CUBE, 0.25)
    field = interpolate_levelset(lambda x, t: x[:, 2] - 0.3, mesh, 0.0)
    surface = extract_surface(field)
    _, active = cut_strip(field)
    return mesh, surface, active


@pytest.fixture(scope="module")
def sphere_band(sphere_mesh, sphere_field, sphere_surface):
    _, active = cut_strip(sphere_field)
    values = np.random.default_rng(11).uniform(-1.0, 2.0, size=active.size)
    state = extend(sphere_surface, sphere_mesh, values, stop_radius=0.6)
    return state, active, values


@pytest.fixture
def two_tet_state():
    vertices = np.array([
        [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [2.0, 0.0, 0.0],
    ])
    mesh = build_mesh(vertices, np.array([[0, 1, 2, 3], [1, 4, 2, 3]]))
    n = mesh.n_vertices
    return NarrowBandState(
        mesh=mesh,
        status=np.full(n, UNKNOWN, dtype=np.int8),
        d=np.full(n, np.inf),
        u_ext=np.full(n, np.nan),
        heap=[],
        stop_radius=1.0,
        surface_vertices=np.empty(0, dtype=np.int64),
    )


class TestInitialization:
    """Distances on N_Gamma and the first active layer."""

    def test_plane_distances_exact(self, plane_setup):
        mesh, surface, active = plane_setup
        state = init_band(surface, mesh, np.zeros(active.size), stop_radius=0.0)
        z = mesh.vertices[active, 2]
        assert set(np.round(z, 12)) == {0.25, 0.5}
        np.testing.assert_allclose(state.d[active], np.abs(z - 0.3), atol=1e-12)
        assert np.all(state.status[active] == FINISHED)

    def test_first_active_layer(self, plane_setup):
        mesh, surface, active = plane_setup
        state = init_band(surface, mesh, np.zeros(active.size))
        expected = np.setdiff1d(mesh.neighbours_of(active), active)
        np.testing.assert_array_equal(np.flatnonzero(state.status == ACTIVE), expected)

    def test_full_length_values_accepted(self, plane_setup):
        mesh, surface, active = plane_setup
        nodal = mesh.vertices[:, 0].copy()
        state = init_band(surface, mesh, nodal)
        np.testing.assert_array_equal(state.u_ext[active], nodal[active])

    def test_wrong_value_count(self, plane_setup):
        mesh, surface, active = plane_setup
        with pytest.raises(ExtensionError):
            init_band(surface, mesh, np.zeros(active.size + 1))

    def test_empty_surface(self, plane_setup):
        mesh, _, _ = plane_setup
        field = interpolate_levelset(lambda x, t: np.ones(len(x)), mesh, 0.0)
        with pytest.raises(ExtensionError):
            init_band(extract_surface(field), mesh, np.zeros(0))

    def test_sphere_distances_first_order(self, sphere_mesh, sphere_surface, sphere_field):
        _, active = cut_strip(sphere_field)
        state = init_band(sphere_surface, sphere_mesh, np.zeros(active.size))
        exact = np.abs(np.linalg.norm(sphere_mesh.vertices[active], axis=1) - 1.0)
        assert np.max(np.abs(state.d[active] - exact)) <= math.sqrt(3.0) * sphere_mesh.h


class TestCandidates:
    """Projection updates from finished vertices."""

    def test_single_neighbour(self, two_tet_state):
        state = two_tet_state
        state.status[0] = FINISHED
        state.d[0], state.u_ext[0] = 0.3, 2.0
        d, u = _simplex_candidate(state, 1, [0], TOL)
        assert d == pytest.approx(1.3)
        assert u == 2.0

    def test_edge_projection(self, two_tet_state):
        state = two_tet_state
        for y, value in ((1, 1.0), (2, 3.0)):
            state.status[y] = FINISHED
            state.d[y], state.u_ext[y] = 0.1, value
        d, u = _simplex_candidate(state, 3, [1, 2], TOL)
        assert d == pytest.approx(0.1 + math.sqrt(1.5))
        assert u == pytest.approx(2.0)

    def test_projection_outside_falls_back_to_vertices(self, two_tet_state):
        state = two_tet_state
        for y, value in ((1, 1.0), (2, 3.0)):
            state.status[y] = FINISHED
            state.d[y], state.u_ext[y] = 0.1, value
        d, u = _simplex_candidate(state, 4, [1, 2], TOL)
        assert d == pytest.approx(1.1)
        assert u == 1.0

    def test_face_projection(self, two_tet_state):
        state = two_tet_state
        for y in (1, 2, 3):
            state.status[y] = FINISHED
            state.d[y], state.u_ext[y] = 0.2, float(y)
        d, u = _simplex_candidate(state, 0, [1, 2, 3], TOL)
        # Origin projects onto the centroid of the face x1 + x2 + x3 = 1
        assert d == pytest.approx(0.2 + 1.0 / math.sqrt(3.0))
        assert u == pytest.approx(2.0)


class TestMarch:
    """Extension phase."""

    def test_plane_distance_everywhere(self, plane_setup):
        mesh, surface, active = plane_setup
        state = extend(surface, mesh, np.zeros(active.size), stop_radius=1.0)
        assert state.n_finished == mesh.n_vertices
        assert state.n_active == 0
        np.testing.assert_allclose(state.d, np.abs(mesh.vertices[:, 2] - 0.3), atol=1e-10)

    def test_constant_is_reproduced(self, plane_setup):
        mesh, surface, active = plane_setup
        state = extend(surface, mesh, np.full(active.size, 4.5), stop_radius=1.0)
        np.testing.assert_allclose(state.extended_values(), 4.5, rtol=1e-14)

    def test_tiny_radius_keeps_first_layer(self, sphere_mesh, sphere_surface, sphere_field):
        _, active = cut_strip(sphere_field)
        state = extend(sphere_surface, sphere_mesh, np.ones(active.size), stop_radius=0.0)
        np.testing.assert_array_equal(state.finished_vertices, sphere_mesh.neighbours_of(active))

    def test_finalized_distances_non_decreasing(self, sphere_band):
        state, _, _ = sphere_band
        order = state.finalized_distances()
        assert order.size > 0
        assert np.all(np.diff(order) >= 0.0)

    def test_plane_candidates_arrive_in_order(self, plane_setup):
        mesh, surface, active = plane_setup
        state = extend(surface, mesh, np.zeros(active.size), stop_radius=1.0)
        candidates = state.marched_candidates()
        assert candidates.size == len(state.finalize_order) > 0
        assert np.all(np.diff(candidates) >= -1e-10)
        assert state.n_clamped == 0

    def test_sphere_candidate_dips_stay_below_one_cell(self, sphere_band, sphere_mesh):
        state, _, _ = sphere_band
        candidates = state.marched_candidates()
        assert candidates.size == len(state.finalize_order)
        running = np.maximum.accumulate(candidates)
        assert np.all(candidates >= running - sphere_mesh.h)
        assert state.n_clamped == int(np.sum(candidates < running))

    def test_finalized_distance_is_running_maximum(self, sphere_band):
        state, _, _ = sphere_band
        np.testing.assert_array_equal(
            state.finalized_distances(), np.maximum.accumulate(state.marched_candidates())
        )

    def test_linear_data_extends_along_plane_normal(self, plane_setup):
        mesh, surface, active = plane_setup
        state = extend(surface, mesh, mesh.vertices[active, 0], stop_radius=1.0)
        np.testing.assert_allclose(state.extended_values(), mesh.vertices[:, 0], atol=1e-10)

    def test_maximum_principle(self, sphere_band):
        state, _, values = sphere_band
        extended = state.u_ext[state.finished]
        assert extended.min() >= values.min() - 1e-12
        assert extended.max() <= values.max() + 1e-12
        assert state.value_range == (values.min(), values.max())

    def test_surface_values_untouched(self, sphere_band):
        state, active, values = sphere_band
        np.testing.assert_array_equal(state.u_ext[active], values)

    def test_band_grows_past_first_layer(self, sphere_band, sphere_mesh):
        state, active, _ = sphere_band
        first_layer = sphere_mesh.neighbours_of(active)
        assert state.n_finished > first_layer.size
        assert np.all(state.finished[first_layer])

    def test_deterministic(self, sphere_mesh, sphere_surface, sphere_band):
        state, _, values = sphere_band
        again = extend(sphere_surface, sphere_mesh, values, stop_radius=0.6)
        assert again.finalize_order == state.finalize_order
        np.testing.assert_array_equal(again.d, state.d)

    def test_march_with_nothing_active(self, plane_setup):
        mesh, surface, active = plane_setup
        state = init_band(surface, mesh, np.zeros(active.size))
        state.status[state.status == ACTIVE] = UNKNOWN
        state.heap.clear()
        assert march(state).n_finished == active.size

    def test_band_table_rows(self, plane_setup):
        mesh, surface, active = plane_setup
        state = extend(surface, mesh, np.zeros(active.size), stop_radius=0.0)
        rows = band_table(state)
        assert len(rows) == state.n_finished
        assert {row[1] for row in rows} == {"finished"}
        assert [row[0] for row in rows] == sorted(row[0] for row in rows)


class TestMarchConvergence:
    """Band distances against the exact distance to the unit sphere."""

    @pytest.mark.slow
    def test_sphere_band_distance_first_order(self):
        box = ((-1.75, 1.75),) * 3
        errors = []
        for h in (0.25, 0.125, 0.0625):
            mesh = build_kuhn_mesh(box, h)
            field = interpolate_levelset(lambda x, t: np.linalg.norm(x, axis=1) - 1.0, mesh, 0.0)
            _, active = cut_strip(field)
            state = extend(extract_surface(field), mesh, np.zeros(active.size), stop_radius=0.3)
            band = state.finished_vertices
            exact = np.abs(np.linalg.norm(mesh.vertices[band], axis=1) - 1.0)
            error = float(np.max(np.abs(state.d[band] - exact)))
            assert error <= math.sqrt(3.0) * h
            errors.append(error)
        assert errors[2] < errors[0]

"""
Fast Marching Extension Service

Computes from the solution values on the cut strip an approximate distance
d(x) to Gamma_h and an extension u_ext(x) on a widened band of vertices.

Initialization assigns every vertex of a cut tetrahedron its distance to the
surface pieces of its incident cut tetrahedra. The extension phase is a
Dijkstra-like greedy march: active vertices carry candidate values obtained
by projecting onto the finished vertices of an incident tetrahedron, and the
active vertex with the smallest candidate distance is finalized next.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.config.settings import get_settings
from app.services.level_set_service import SurfaceTriangulation
from app.services.mesh_service import BackgroundMesh

logger = logging.getLogger(__name__)

FINISHED = 0
ACTIVE = 1
UNKNOWN = 2

STATUS_NAMES = {FINISHED: "finished", ACTIVE: "active", UNKNOWN: "unknown"}


class ExtensionError(RuntimeError):
    """Raised when the extension cannot be initialized or the march is inconsistent."""
    pass


@dataclass
class NarrowBandState:
    """
    Per-vertex state of the fast marching extension.

    Attributes:
        mesh: background mesh
        status: FINISHED, ACTIVE or UNKNOWN per vertex
        d: finalized distance (finished) or current candidate (active); inf otherwise
        u_ext: finalized extension (finished) or current candidate (active); nan otherwise
        heap: (candidate distance, vertex) entries, stale entries skipped on pop
        stop_radius: active set only grows from vertices with d <= stop_radius
        surface_vertices: sorted ids of N_Gamma
        finalize_order: vertices in the order they left the active set
        candidate_order: popped candidate distance of each finalized vertex
        n_clamped: finalizations whose candidate fell below the previous one
        value_range: (min, max) of the initial band values
    """

    mesh: BackgroundMesh
    status: np.ndarray
    d: np.ndarray
    u_ext: np.ndarray
    heap: List[Tuple[float, int]]
    stop_radius: float
    surface_vertices: np.ndarray
    finalize_order: List[int] = field(default_factory=list)
    candidate_order: List[float] = field(default_factory=list)
    n_clamped: int = 0
    value_range: Tuple[float, float] = (0.0, 0.0)

    @property
    def finished(self) -> np.ndarray:
        """Boolean mask of finished vertices."""
        return self.status == FINISHED

    @property
    def finished_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.status == FINISHED)

    @property
    def n_finished(self) -> int:
        return int(np.count_nonzero(self.status == FINISHED))

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.status == ACTIVE))

    def finalized_distances(self) -> np.ndarray:
        """Distances of the marched vertices in finalization order."""
        return self.d[np.asarray(self.finalize_order, dtype=np.int64)]

    def marched_candidates(self) -> np.ndarray:
        """Heap values as popped, before the monotone clamp."""
        return np.asarray(self.candidate_order, dtype=float)

    def extended_values(self) -> np.ndarray:
        """Full-length nodal field: u_ext on finished vertices, nan elsewhere."""
        values = np.full(self.mesh.n_vertices, np.nan)
        mask = self.finished
        values[mask] = self.u_ext[mask]
        return values


def _triangle_distances(points: np.ndarray, triangles: np.ndarray, normals: np.ndarray, tol: float) -> np.ndarray:
    """
    d_T for each (triangle, point) pair: distance to the triangle's plane when
    the projection falls inside the triangle, otherwise the nearest corner.

    Args:
        points: (n, k, 3) points, k per triangle
        triangles: (n, 3, 3) triangle corners
        normals: (n, 3) unit normals
        tol: barycentric inclusion tolerance

    Returns:
        np.ndarray: (n, k) distances
    """
    t0 = triangles[:, 0, :]
    e1 = triangles[:, 1, :] - t0
    e2 = triangles[:, 2, :] - t0
    r = points - t0[:, None, :]
    normal_dist = np.abs(np.einsum("nkj,nj->nk", r, normals))

    a = np.einsum("nj,nj->n", e1, e1)
    b = np.einsum("nj,nj->n", e1, e2)
    c = np.einsum("nj,nj->n", e2, e2)
    det = a * c - b * b
    p = np.einsum("nkj,nj->nk", r, e1)
    q = np.einsum("nkj,nj->nk", r, e2)
    regular = det > 1e-14 * np.maximum(a * c, np.finfo(float).tiny)
    safe = np.where(regular, det, 1.0)[:, None]
    l1 = (c[:, None] * p - b[:, None] * q) / safe
    l2 = (a[:, None] * q - b[:, None] * p) / safe
    l0 = 1.0 - l1 - l2
    inside = regular[:, None] & (l0 >= -tol) & (l1 >= -tol) & (l2 >= -tol)

    corner = np.linalg.norm(points[:, :, None, :] - triangles[:, None, :, :], axis=3).min(axis=2)
    return np.where(inside, normal_dist, corner)


def init_band(
    surface: SurfaceTriangulation,
    mesh: BackgroundMesh,
    u_active: np.ndarray,
    stop_radius: Optional[float] = None,
) -> NarrowBandState:
    """
    Initialization phase: finished set N_Gamma with distances, active set seeded.

    Args:
        surface: surface triangulation Gamma_h
        mesh: background mesh
        u_active: values on N_Gamma (sorted vertex ids), or a full-length nodal field
        stop_radius (float, optional): growth radius; defaults to mesh.h

    Returns:
        NarrowBandState: initialized state, ready for march()

    Raises:
        ExtensionError: If the surface is empty or u_active has the wrong size
    """
    if surface.is_empty:
        raise ExtensionError("Cannot initialize the extension band from an empty surface")
    settings = get_settings()
    tol = settings.projection_tolerance
    n = mesh.n_vertices
    surface_vertices = np.unique(mesh.tets[surface.parent_tet])

    values = np.asarray(u_active, dtype=float)
    if values.shape == (n,) and surface_vertices.size != n:
        values = values[surface_vertices]
    if values.shape != surface_vertices.shape:
        raise ExtensionError(
            f"Expected {surface_vertices.size} band values (one per surface vertex), got {values.shape[0]}"
        )

    parent_vertices = mesh.tets[surface.parent_tet]
    d_t = _triangle_distances(mesh.vertices[parent_vertices], surface.triangles, surface.normals, tol)
    d = np.full(n, np.inf)
    np.minimum.at(d, parent_vertices.ravel(), d_t.ravel())

    status = np.full(n, UNKNOWN, dtype=np.int8)
    status[surface_vertices] = FINISHED
    u_ext = np.full(n, np.nan)
    u_ext[surface_vertices] = values

    state = NarrowBandState(
        mesh=mesh,
        status=status,
        d=d,
        u_ext=u_ext,
        heap=[],
        stop_radius=float(mesh.h if stop_radius is None else stop_radius),
        surface_vertices=surface_vertices,
        value_range=(float(values.min()), float(values.max())),
    )

    seeds = mesh.neighbours_of(surface_vertices)
    seeds = seeds[status[seeds] == UNKNOWN]
    for x in seeds.tolist():
        _activate(state, x)
    logger.debug(
        f"🎯 Band initialized | surface_vertices={surface_vertices.size} | "
        f"active={seeds.size} | stop_radius={state.stop_radius:.4g}"
    )
    return state


def _simplex_candidate(state: NarrowBandState, x: int, ys: List[int], tol: float) -> Tuple[float, float]:
    """Candidate (d, u) for vertex x from the finished vertices ys of one tetrahedron."""
    coords = state.mesh.vertex_list
    d = state.d
    u = state.u_ext
    px = coords[x]

    def via_vertex():
        best = None
        for y in sorted(ys):
            py = coords[y]
            value = d[y] + math.dist(px, py)
            if best is None or value < best[0]:
                best = (value, u[y])
        return best

    if len(ys) == 1:
        return via_vertex()

    y0 = coords[ys[0]]
    r = [px[k] - y0[k] for k in range(3)]
    if len(ys) == 2:
        e = [coords[ys[1]][k] - y0[k] for k in range(3)]
        ee = e[0] * e[0] + e[1] * e[1] + e[2] * e[2]
        s = (r[0] * e[0] + r[1] * e[1] + r[2] * e[2]) / ee
        lam = (1.0 - s, s)
    else:
        e1 = [coords[ys[1]][k] - y0[k] for k in range(3)]
        e2 = [coords[ys[2]][k] - y0[k] for k in range(3)]
        a = e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]
        b = e1[0] * e2[0] + e1[1] * e2[1] + e1[2] * e2[2]
        c = e2[0] * e2[0] + e2[1] * e2[1] + e2[2] * e2[2]
        p = r[0] * e1[0] + r[1] * e1[1] + r[2] * e1[2]
        q = r[0] * e2[0] + r[1] * e2[1] + r[2] * e2[2]
        det = a * c - b * b
        s1 = (c * p - b * q) / det
        s2 = (a * q - b * p) / det
        lam = (1.0 - s1 - s2, s1, s2)

    if min(lam) < -tol or max(lam) > 1.0 + tol:
        return via_vertex()

    # Clip roundoff so the interpolated value stays within the finished values
    lam = [min(max(l, 0.0), 1.0) for l in lam]
    total = sum(lam)
    lam = [l / total for l in lam]
    projection = [sum(lam[j] * coords[ys[j]][k] for j in range(len(ys))) for k in range(3)]
    d_proj = sum(lam[j] * d[ys[j]] for j in range(len(ys)))
    u_proj = sum(lam[j] * u[ys[j]] for j in range(len(ys)))
    return d_proj + math.dist(px, projection), u_proj


def _tet_candidate(state: NarrowBandState, x: int, tet: int, tol: float) -> Optional[Tuple[float, float]]:
    ys = [y for y in state.mesh.tet_list[tet] if y != x and state.status[y] == FINISHED]
    if not ys:
        return None
    return _simplex_candidate(state, x, ys, tol)


def _activate(state: NarrowBandState, x: int) -> None:
    """Move x from unknown to active with a full scan of its tetrahedra."""
    tol = get_settings().projection_tolerance
    best = None
    for tet in state.mesh.tets_of(x).tolist():
        candidate = _tet_candidate(state, x, tet, tol)
        if candidate is not None and (best is None or candidate[0] < best[0]):
            best = candidate
    if best is None:
        return
    state.status[x] = ACTIVE
    state.d[x], state.u_ext[x] = best
    heapq.heappush(state.heap, (best[0], x))


def march(state: NarrowBandState, mesh: Optional[BackgroundMesh] = None) -> NarrowBandState:
    """
    Extension phase: finalize active vertices in increasing candidate distance.

    After each finalization the incident tetrahedra are rescanned; active
    vertices keep their stored candidate unless the new one is strictly
    smaller. Unknown neighbours join the active set only when the finalized
    distance does not exceed the stop radius. Ties are broken by vertex id.

    Args:
        state (NarrowBandState): initialized state (modified in place)
        mesh (BackgroundMesh, optional): background mesh; defaults to the state's mesh

    Returns:
        NarrowBandState: the completed state, no active vertices left

    Raises:
        ExtensionError: If the heap empties while vertices are still active
    """
    mesh = mesh or state.mesh
    tol = get_settings().projection_tolerance
    status, d, u = state.status, state.d, state.u_ext
    last = 0.0
    while state.heap:
        candidate, x = heapq.heappop(state.heap)
        if status[x] != ACTIVE or candidate != d[x]:
            continue
        state.candidate_order.append(candidate)
        if candidate < last:
            state.n_clamped += 1
        # Finalized distances never decrease along the march
        last = max(candidate, last)
        d[x] = last
        status[x] = FINISHED
        state.finalize_order.append(x)
        grow = last <= state.stop_radius

        for tet in mesh.tets_of(x).tolist():
            for y in mesh.tet_list[tet]:
                if status[y] == FINISHED:
                    continue
                if status[y] == UNKNOWN:
                    if grow:
                        _activate(state, y)
                    continue
                update = _tet_candidate(state, y, tet, tol)
                if update is not None and update[0] < d[y]:
                    d[y], u[y] = update
                    heapq.heappush(state.heap, (update[0], y))

    if state.n_active:
        raise ExtensionError(f"Heap exhausted with {state.n_active} vertices still active")
    logger.debug(
        f"✅ March complete | finished={state.n_finished} | marched={len(state.finalize_order)} | "
        f"max_d={last:.4g} | clamped={state.n_clamped}"
    )
    return state


def extend(
    surface: SurfaceTriangulation,
    mesh: BackgroundMesh,
    u_active: np.ndarray,
    stop_radius: Optional[float] = None,
) -> NarrowBandState:
    """Initialize and march in one call."""
    return march(init_band(surface, mesh, u_active, stop_radius), mesh)


def band_table(state: NarrowBandState) -> List[Tuple[int, str, float, float]]:
    """(vertex, status, d, u_ext) rows for every vertex that is not unknown."""
    touched = np.flatnonzero(state.status != UNKNOWN)
    return [
        (int(v), STATUS_NAMES[int(state.status[v])], float(state.d[v]), float(state.u_ext[v]))
        for v in touched
    ]

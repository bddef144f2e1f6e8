"""
Level Set Service

Represents the P1 level-set field phi_h(., t_n) on the background mesh and
extracts from it the discrete surface Gamma_h (a union of planar triangles,
one or two per cut tetrahedron) and the strip of cut tetrahedra.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from app.config.settings import get_settings
from app.services.mesh_service import BackgroundMesh, tet_basis_gradients

logger = logging.getLogger(__name__)

LevelSetFunction = Callable[[np.ndarray, float], np.ndarray]


class LevelSetError(ValueError):
    """Raised for invalid level-set input."""
    pass


class SurfaceLeftDomainError(LevelSetError):
    """Raised when no tetrahedron of the mesh is cut by the zero level."""
    pass


@dataclass(frozen=True)
class LevelSetField:
    """
    Nodal P1 level-set values at one time instant.

    Attributes:
        mesh: background mesh the values live on
        nodal_values: one value per mesh vertex, none exactly zero
        time: time instant t_n
    """

    mesh: BackgroundMesh
    nodal_values: np.ndarray
    time: float

    def tet_values(self, tet_ids: Optional[np.ndarray] = None) -> np.ndarray:
        """(n, 4) nodal values per tetrahedron."""
        tets = self.mesh.tets if tet_ids is None else self.mesh.tets[tet_ids]
        return self.nodal_values[tets]


@dataclass(frozen=True)
class SurfaceTriangulation:
    """
    Planar triangles of Gamma_h with links to their parent tetrahedra.

    Attributes:
        triangles: (n, 3, 3) triangle vertex coordinates
        parent_tet: (n,) id of the tetrahedron containing each triangle
        edge_vertices: (n, 3, 2) mesh edge (sorted vertex pair) each triangle vertex lies on
        areas: (n,) triangle areas
        normals: (n, 3) unit normals, oriented along grad(phi_h) of the parent tet
        time: time instant of the generating field
    """

    triangles: np.ndarray
    parent_tet: np.ndarray
    edge_vertices: np.ndarray
    areas: np.ndarray
    normals: np.ndarray
    time: float

    @property
    def n_triangles(self) -> int:
        return int(self.parent_tet.shape[0])

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def is_empty(self) -> bool:
        return self.n_triangles == 0


def sign_cleanup(values: np.ndarray, h: float, factor: Optional[float] = None) -> np.ndarray:
    """
    Move nodal values with |phi| < factor*h to +factor*h.

    Args:
        values: nodal level-set values
        h (float): mesh size
        factor (float, optional): cleanup factor (settings default)

    Returns:
        np.ndarray: cleaned copy with no exact zeros
    """
    if factor is None:
        factor = get_settings().sign_cleanup_factor
    threshold = factor * h
    cleaned = np.array(values, dtype=float, copy=True)
    cleaned[np.abs(cleaned) < threshold] = threshold
    return cleaned


def interpolate_levelset(phi: LevelSetFunction, mesh: BackgroundMesh, t: float) -> LevelSetField:
    """
    Nodal P1 interpolant of an analytic level-set function, after sign cleanup.

    Args:
        phi: vectorised callable (points (n, 3), time) -> (n,) values
        mesh (BackgroundMesh): background mesh
        t (float): time instant

    Returns:
        LevelSetField: cleaned nodal field

    Raises:
        LevelSetError: If phi is not finite at some vertex
    """
    values = np.asarray(phi(mesh.vertices, t), dtype=float).reshape(-1)
    if values.shape[0] != mesh.n_vertices:
        raise LevelSetError(f"Level-set callable returned {values.shape[0]} values for {mesh.n_vertices} vertices")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        vertex = int(bad[0])
        raise LevelSetError(
            f"Level-set value at vertex {vertex} {tuple(mesh.vertices[vertex])} is not finite (t={t})"
        )
    return LevelSetField(mesh=mesh, nodal_values=sign_cleanup(values, mesh.h), time=float(t))


def cut_tet_mask(field: LevelSetField) -> np.ndarray:
    """Boolean mask of tetrahedra whose nodal values change sign."""
    values = field.tet_values()
    return (values.min(axis=1) < 0.0) & (values.max(axis=1) > 0.0)


def cut_strip(field: LevelSetField) -> Tuple[np.ndarray, np.ndarray]:
    """
    Strip of cut tetrahedra and its vertex set.

    Args:
        field (LevelSetField): cleaned level-set field

    Returns:
        Tuple[np.ndarray, np.ndarray]: sorted cut tet ids S(Gamma_h) and sorted
        active vertex ids N_Gamma

    Raises:
        SurfaceLeftDomainError: If no tetrahedron is cut
    """
    cut_tets = np.flatnonzero(cut_tet_mask(field))
    if cut_tets.size == 0:
        raise SurfaceLeftDomainError(f"No tetrahedron is cut by the zero level at t={field.time}; the surface left the domain")
    active = np.unique(field.mesh.tets[cut_tets])
    return cut_tets, active


def _edge_points(vertices, values, va, vb):
    """
    Zero crossing of the linear interpolant on the edges (va, vb).

    Endpoints are visited in ascending global id so that tetrahedra sharing
    an edge compute bit-identical points.
    """
    lo = np.minimum(va, vb)
    hi = np.maximum(va, vb)
    phi_lo = values[lo]
    phi_hi = values[hi]
    s = phi_lo / (phi_lo - phi_hi)
    points = vertices[lo] + s[:, None] * (vertices[hi] - vertices[lo])
    return points, np.stack([lo, hi], axis=1)


def extract_surface(field: LevelSetField) -> SurfaceTriangulation:
    """
    Zero level of the P1 level-set field as a triangle soup.

    A tetrahedron with a one-vs-three sign split contributes one triangle;
    a two-vs-two split gives a planar quadrilateral, divided along its
    shorter diagonal into two triangles. Small triangles are kept.

    Args:
        field (LevelSetField): cleaned level-set field

    Returns:
        SurfaceTriangulation: triangles ordered by parent tetrahedron
    """
    mesh = field.mesh
    vertices = mesh.vertices
    values = field.nodal_values
    cut = np.flatnonzero(cut_tet_mask(field))
    if cut.size == 0:
        logger.debug(f"🫙 Empty zero level at t={field.time}")
        empty = np.empty((0, 3, 3))
        return SurfaceTriangulation(
            triangles=empty,
            parent_tet=np.empty(0, dtype=np.int64),
            edge_vertices=np.empty((0, 3, 2), dtype=np.int64),
            areas=np.empty(0),
            normals=np.empty((0, 3)),
            time=field.time,
        )

    tets = mesh.tets[cut]
    negative = values[tets] < 0.0
    n_negative = negative.sum(axis=1)
    # Stable sort puts negative vertices first, keeping local order inside each group
    order = np.argsort(~negative, axis=1, kind="stable")
    sorted_tets = np.take_along_axis(tets, order, axis=1)

    pieces = []

    # One-vs-three: the minority vertex connects to the other three
    single = np.flatnonzero(n_negative != 2)
    if single.size:
        st = sorted_tets[single]
        lone_negative = n_negative[single] == 1
        lone = np.where(lone_negative, st[:, 0], st[:, 3])
        others = np.where(lone_negative[:, None], st[:, 1:], st[:, :3])
        pts, edges = [], []
        for k in range(3):
            p, e = _edge_points(vertices, values, lone, others[:, k])
            pts.append(p)
            edges.append(e)
        pieces.append((cut[single], np.stack(pts, axis=1), np.stack(edges, axis=1)))

    # Two-vs-two: quadrilateral ac, ad, bd, bc split along the shorter diagonal
    double = np.flatnonzero(n_negative == 2)
    if double.size:
        st = sorted_tets[double]
        a, b, c, d = st[:, 0], st[:, 1], st[:, 2], st[:, 3]
        p_ac, e_ac = _edge_points(vertices, values, a, c)
        p_ad, e_ad = _edge_points(vertices, values, a, d)
        p_bd, e_bd = _edge_points(vertices, values, b, d)
        p_bc, e_bc = _edge_points(vertices, values, b, c)
        first = np.linalg.norm(p_ac - p_bd, axis=1) <= np.linalg.norm(p_ad - p_bc, axis=1)
        sel = first[:, None]
        # Diagonal ac-bd: (ac, ad, bd) + (ac, bd, bc); diagonal ad-bc: (ad, bd, bc) + (ad, bc, ac)
        t1 = np.stack([np.where(sel, p_ac, p_ad), np.where(sel, p_ad, p_bd), np.where(sel, p_bd, p_bc)], axis=1)
        t2 = np.stack([np.where(sel, p_ac, p_ad), np.where(sel, p_bd, p_bc), np.where(sel, p_bc, p_ac)], axis=1)
        f1 = np.stack([np.where(sel, e_ac, e_ad), np.where(sel, e_ad, e_bd), np.where(sel, e_bd, e_bc)], axis=1)
        f2 = np.stack([np.where(sel, e_ac, e_ad), np.where(sel, e_bd, e_bc), np.where(sel, e_bc, e_ac)], axis=1)
        parents = cut[double]
        pieces.append((parents, t1, f1))
        pieces.append((parents, t2, f2))

    parent_tet = np.concatenate([p[0] for p in pieces])
    triangles = np.concatenate([p[1] for p in pieces])
    edge_vertices = np.concatenate([p[2] for p in pieces])
    order = np.argsort(parent_tet, kind="stable")
    parent_tet, triangles, edge_vertices = parent_tet[order], triangles[order], edge_vertices[order]

    # Orientation along grad(phi_h) of the parent tetrahedron
    grads = tet_basis_gradients(vertices[mesh.tets[parent_tet]])
    grad_phi = np.einsum("ni,nij->nj", values[mesh.tets[parent_tet]], grads)
    cross = np.cross(triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0])
    flip = np.einsum("ij,ij->i", cross, grad_phi) < 0.0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    edge_vertices[flip] = edge_vertices[flip][:, [0, 2, 1]]
    cross[flip] = -cross[flip]

    norm = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norm
    normals = np.empty_like(cross)
    ok = norm > 0.0
    normals[ok] = cross[ok] / norm[ok, None]
    # Zero-area slivers borrow the level-set direction
    normals[~ok] = grad_phi[~ok] / np.linalg.norm(grad_phi[~ok], axis=1)[:, None]

    surface = SurfaceTriangulation(
        triangles=triangles,
        parent_tet=parent_tet,
        edge_vertices=edge_vertices,
        areas=areas,
        normals=normals,
        time=field.time,
    )
    logger.debug(
        f"🔺 Surface extracted | t={field.time:.6g} | cut_tets={cut.size} | "
        f"triangles={surface.n_triangles} | area={surface.total_area:.6f}"
    )
    return surface


def tet_gradient(field: LevelSetField, tet_ids: np.ndarray) -> np.ndarray:
    """Constant gradient of phi_h on each of the given tetrahedra."""
    mesh = field.mesh
    grads = tet_basis_gradients(mesh.vertices[mesh.tets[tet_ids]])
    return np.einsum("ni,nij->nj", field.nodal_values[mesh.tets[tet_ids]], grads)


def evaluate_on_surface(surface: SurfaceTriangulation, mesh: BackgroundMesh, nodal: np.ndarray) -> np.ndarray:
    """
    P1 values of a nodal field at the triangle vertices of the surface.

    Args:
        surface: surface triangulation
        mesh: background mesh
        nodal: one value per mesh vertex

    Returns:
        np.ndarray: (n_triangles, 3) values
    """
    if surface.is_empty:
        return np.empty((0, 3))
    tets = mesh.tets[surface.parent_tet]
    tet_vertices = mesh.vertices[tets]
    grads = tet_basis_gradients(tet_vertices)
    offset = surface.triangles - tet_vertices[:, None, 0, :]
    lam = np.einsum("nqj,nij->nqi", offset, grads)
    lam[:, :, 0] += 1.0
    return np.einsum("nqi,ni->nq", lam, nodal[tets])

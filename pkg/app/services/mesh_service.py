"""
Background Mesh Service

Builds and queries the fixed tetrahedral triangulation of the computational
box. The mesh is a uniform cube grid with every cube split into six
tetrahedra around its main diagonal (Kuhn subdivision), so it is conforming
and its shape regularity does not depend on the cell size.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Box = Tuple[Tuple[float, float], Tuple[float, float], Tuple[float, float]]

# Relative tolerance for "side length is a multiple of h"
GRID_TOLERANCE = 1e-9


class MeshError(ValueError):
    """Raised for invalid mesh input or degenerate elements."""
    pass


def _kuhn_local_tets() -> np.ndarray:
    """
    Local corner indices of the six Kuhn tetrahedra of a unit cube.

    Corner (a, b, c) of the cube has local index 4a + 2b + c. Every
    tetrahedron walks from corner (0,0,0) to (1,1,1) along one axis
    permutation; odd permutations swap their last two vertices so that all
    six have positive orientation.
    """
    local = []
    for perm in itertools.permutations(range(3)):
        corner = [0, 0, 0]
        path = [0]
        for axis in perm:
            corner[axis] = 1
            path.append(4 * corner[0] + 2 * corner[1] + corner[2])
        inversions = sum(1 for i in range(3) for j in range(i + 1, 3) if perm[i] > perm[j])
        if inversions % 2 == 1:
            path[2], path[3] = path[3], path[2]
        local.append(path)
    return np.array(local, dtype=np.int64)


@dataclass(frozen=True)
class BackgroundMesh:
    """
    Time-independent tetrahedral triangulation of an axis-aligned box.

    Attributes:
        vertices: (n_vertices, 3) coordinates, indexed lexicographically by (i, j, k)
        tets: (n_tets, 4) vertex indices of every tetrahedron, positively oriented
        vertex_tet_offsets: CSR offsets of the vertex -> incident tets map
        vertex_tet_indices: CSR column array of the vertex -> incident tets map
        h: cube side length (refinement parameter)
        box: axis-aligned bounds of the domain
        shape: number of cells along each axis
    """

    vertices: np.ndarray
    tets: np.ndarray
    vertex_tet_offsets: np.ndarray
    vertex_tet_indices: np.ndarray
    h: float
    box: Box
    shape: Tuple[int, int, int]

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_tets(self) -> int:
        return int(self.tets.shape[0])

    @property
    def max_diameter(self) -> float:
        """Largest tetrahedron diameter (the cube diagonal)."""
        return self.h * math.sqrt(3.0)

    def tets_of(self, vertex: int) -> np.ndarray:
        """Ids of all tetrahedra sharing ``vertex``."""
        return self.vertex_tet_indices[self.vertex_tet_offsets[vertex]:self.vertex_tet_offsets[vertex + 1]]

    def tets_of_many(self, vertices: np.ndarray) -> np.ndarray:
        """Sorted unique ids of all tetrahedra touching any of ``vertices``."""
        vertices = np.asarray(vertices, dtype=np.int64)
        if vertices.size == 0:
            return np.empty(0, dtype=np.int64)
        starts = self.vertex_tet_offsets[vertices]
        counts = self.vertex_tet_offsets[vertices + 1] - starts
        index = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
        return np.unique(self.vertex_tet_indices[index])

    def neighbours_of(self, vertices: np.ndarray) -> np.ndarray:
        """Sorted unique vertices sharing a tetrahedron with any of ``vertices`` (inclusive)."""
        return np.unique(self.tets[self.tets_of_many(vertices)])

    @cached_property
    def vertex_list(self):
        """Vertex coordinates as nested Python lists, for scalar-heavy loops."""
        return self.vertices.tolist()

    @cached_property
    def tet_list(self):
        """Tetrahedron vertex ids as nested Python lists."""
        return self.tets.tolist()

    def tet_volumes(self) -> np.ndarray:
        """Signed volume of every tetrahedron."""
        v = self.vertices[self.tets]
        return np.einsum("ij,ij->i", v[:, 1] - v[:, 0], np.cross(v[:, 2] - v[:, 0], v[:, 3] - v[:, 0])) / 6.0

    def shape_ratios(self) -> np.ndarray:
        """Inscribed-sphere radius over diameter for every tetrahedron."""
        v = self.vertices[self.tets]
        volume = np.abs(self.tet_volumes())
        faces = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))
        surface = np.zeros(self.n_tets)
        for a, b, c in faces:
            surface += 0.5 * np.linalg.norm(np.cross(v[:, b] - v[:, a], v[:, c] - v[:, a]), axis=1)
        inradius = 3.0 * volume / surface
        diameter = np.zeros(self.n_tets)
        for a, b in itertools.combinations(range(4), 2):
            diameter = np.maximum(diameter, np.linalg.norm(v[:, b] - v[:, a], axis=1))
        return inradius / diameter

    def shape_regularity(self) -> float:
        """
        Shape-regularity constant kappa = max over tets of h_S / rho_S.

        Every tetrahedron then satisfies rho_S >= h_S / kappa.
        """
        return float(1.0 / self.shape_ratios().min())


def _cells_along(lo: float, hi: float, h: float) -> int:
    """Number of cells of size h covering [lo, hi], rejecting non-multiples."""
    length = hi - lo
    if length <= 0.0:
        raise MeshError(f"Empty box side [{lo}, {hi}]")
    count = round(length / h)
    if count < 1 or abs(count * h - length) > GRID_TOLERANCE * max(length, 1.0):
        raise MeshError(f"Box side {length} is not an integer multiple of h={h}")
    return int(count)


def _vertex_tet_map(tets: np.ndarray, n_vertices: int) -> Tuple[np.ndarray, np.ndarray]:
    """CSR inverse of the tet -> vertex table, tets sorted ascending within each vertex."""
    flat = tets.ravel()
    order = np.argsort(flat, kind="stable")
    indices = (order // 4).astype(np.int64)
    counts = np.bincount(flat, minlength=n_vertices)
    offsets = np.zeros(n_vertices + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, indices


def build_kuhn_mesh(box: Sequence[Sequence[float]], h: float) -> BackgroundMesh:
    """
    Build the Kuhn triangulation of an axis-aligned box.

    Args:
        box: ((x_lo, x_hi), (y_lo, y_hi), (z_lo, z_hi))
        h (float): cube side length; must divide every box side

    Returns:
        BackgroundMesh: conforming, positively oriented tetrahedral mesh

    Raises:
        MeshError: If h is not positive or does not divide a side length
    """
    if not h > 0.0:
        raise MeshError(f"Mesh size must be positive, got {h}")
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    nx, ny, nz = (_cells_along(lo, hi, h) for lo, hi in box)

    axes = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(box, (nx, ny, nz))]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    ci, cj, ck = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
    corners = np.column_stack([
        vid(ci + a, cj + b, ck + c) for a in (0, 1) for b in (0, 1) for c in (0, 1)
    ])
    local = _kuhn_local_tets()
    tets = corners[:, local].reshape(-1, 4).astype(np.int64)

    offsets, indices = _vertex_tet_map(tets, vertices.shape[0])
    mesh = BackgroundMesh(
        vertices=vertices,
        tets=tets,
        vertex_tet_offsets=offsets,
        vertex_tet_indices=indices,
        h=float(h),
        box=box,
        shape=(nx, ny, nz),
    )
    logger.info(
        f"✅ Kuhn mesh built | h={h:g} | cells={nx}x{ny}x{nz} | "
        f"vertices={mesh.n_vertices} | tets={mesh.n_tets}"
    )
    return mesh


def build_mesh(vertices: np.ndarray, tets: np.ndarray, h: Optional[float] = None) -> BackgroundMesh:
    """
    Wrap an explicit vertex/tetrahedron table as a background mesh.

    Args:
        vertices: (n, 3) coordinates
        tets: (m, 4) vertex indices
        h (float, optional): mesh size; defaults to the longest edge

    Returns:
        BackgroundMesh: mesh with the vertex -> tets map filled in

    Raises:
        MeshError: If a tetrahedron is degenerate
    """
    vertices = np.asarray(vertices, dtype=float)
    tets = np.asarray(tets, dtype=np.int64)
    tet_basis_gradients(vertices[tets])
    if h is None:
        v = vertices[tets]
        h = max(
            float(np.linalg.norm(v[:, b] - v[:, a], axis=1).max())
            for a, b in itertools.combinations(range(4), 2)
        )
    offsets, indices = _vertex_tet_map(tets, vertices.shape[0])
    box = tuple((float(lo), float(hi)) for lo, hi in zip(vertices.min(axis=0), vertices.max(axis=0)))
    return BackgroundMesh(
        vertices=vertices,
        tets=tets,
        vertex_tet_offsets=offsets,
        vertex_tet_indices=indices,
        h=float(h),
        box=box,
        shape=(0, 0, 0),
    )


def p1_basis_gradients(mesh: BackgroundMesh, tet_id: int) -> np.ndarray:
    """
    Gradients of the four barycentric coordinates of one tetrahedron.

    Args:
        mesh (BackgroundMesh): background mesh
        tet_id (int): tetrahedron index

    Returns:
        np.ndarray: (4, 3) array, row i is grad(lambda_i); rows sum to zero

    Raises:
        MeshError: If the id is out of range or the tetrahedron is degenerate
    """
    if not 0 <= tet_id < mesh.n_tets:
        raise MeshError(f"Tetrahedron id {tet_id} out of range [0, {mesh.n_tets})")
    return tet_basis_gradients(mesh.vertices[mesh.tets[[tet_id]]])[0]


def tet_basis_gradients(tet_vertices: np.ndarray) -> np.ndarray:
    """
    Batched barycentric gradients.

    Args:
        tet_vertices: (n, 4, 3) vertex coordinates

    Returns:
        np.ndarray: (n, 4, 3) gradients

    Raises:
        MeshError: If any tetrahedron is degenerate
    """
    edges = tet_vertices[:, 1:, :] - tet_vertices[:, :1, :]
    jac = np.transpose(edges, (0, 2, 1))
    det = np.linalg.det(jac)
    scale = np.max(np.abs(edges), axis=(1, 2)) ** 3
    if np.any(np.abs(det) <= 1e-14 * scale):
        raise MeshError("Degenerate tetrahedron: zero volume")
    inverse = np.linalg.inv(jac)
    grads = np.empty_like(tet_vertices)
    grads[:, 1:, :] = inverse
    grads[:, 0, :] = -inverse.sum(axis=1)
    return grads

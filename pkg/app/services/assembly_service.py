"""
Trace Assembly Service

Assembles the full-gradient trace FEM operators over the discrete surface
Gamma_h: mass, full-gradient stiffness and convection matrices, and load
vectors. Only the bulk P1 degrees of freedom of cut tetrahedra are active.
Integrals over each surface triangle use a symmetric 7-point rule exact for
polynomials of degree five.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from app.services.level_set_service import SurfaceTriangulation, cut_strip, LevelSetField
from app.services.mesh_service import BackgroundMesh, tet_basis_gradients
from app.services.solver_service import SolverResult, as_csr, solve_rescaled

logger = logging.getLogger(__name__)

ScalarField = Callable[[np.ndarray, float], np.ndarray]
VectorField = Callable[[np.ndarray, float], np.ndarray]

# Central-difference step for velocity Jacobians
FD_STEP = 1e-6


class AssemblyError(ValueError):
    """Raised for invalid assembly requests."""
    pass


class MatrixKind(str, Enum):
    """Surface bilinear forms available for assembly."""
    MASS = "mass"
    STIFFNESS = "full_gradient_stiffness"
    CONVECTION = "convection"


@dataclass(frozen=True)
class SurfaceQuadrature:
    """
    Quadrature rule on the reference triangle.

    Attributes:
        points: (q, 3) barycentric coordinates
        weights: (q,) positive weights summing to one (multiply by the area)
        degree: polynomial degree integrated exactly
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


def triangle_quadrature_deg5() -> SurfaceQuadrature:
    """Symmetric 7-point rule, exact to degree five, normalised to unit total weight."""
    r = math.sqrt(15.0)
    a1, b1 = (9.0 - 2.0 * r) / 21.0, (6.0 + r) / 21.0
    a2, b2 = (9.0 + 2.0 * r) / 21.0, (6.0 - r) / 21.0
    w0 = 9.0 / 40.0
    w1 = (155.0 + r) / 1200.0
    w2 = (155.0 - r) / 1200.0
    points = np.array([
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [a1, b1, b1], [b1, a1, b1], [b1, b1, a1],
        [a2, b2, b2], [b2, a2, b2], [b2, b2, a2],
    ])
    weights = np.array([w0, w1, w1, w1, w2, w2, w2])
    return SurfaceQuadrature(points=points, weights=weights, degree=5)


class DofMap:
    """
    Dense numbering of the active vertices N_Gamma.

    Attributes:
        global_ids: sorted global vertex ids of the active set
        local: full-length map global id -> dense index (-1 when inactive)
    """

    def __init__(self, global_ids: np.ndarray, n_vertices: int):
        self.global_ids = np.asarray(global_ids, dtype=np.int64)
        self.local = np.full(n_vertices, -1, dtype=np.int64)
        self.local[self.global_ids] = np.arange(self.global_ids.size)

    @classmethod
    def from_field(cls, field: LevelSetField) -> "DofMap":
        _, active = cut_strip(field)
        return cls(active, field.mesh.n_vertices)

    @property
    def size(self) -> int:
        return int(self.global_ids.size)

    def restrict(self, nodal: np.ndarray) -> np.ndarray:
        """Values of a full-length nodal field on the active dofs."""
        return np.asarray(nodal, dtype=float)[self.global_ids]

    def prolong(self, values: np.ndarray, n_vertices: int, fill: float = np.nan) -> np.ndarray:
        """Full-length nodal field holding ``values`` on the active dofs."""
        nodal = np.full(n_vertices, fill)
        nodal[self.global_ids] = values
        return nodal


@dataclass
class LinearSystem:
    """
    Sparse operator and right-hand side over the active dofs.

    Attributes:
        dofs: active dof numbering
        matrix: CSR matrix over active dofs
        rhs: right-hand side over active dofs
    """

    dofs: DofMap
    matrix: sp.csr_matrix
    rhs: np.ndarray


@dataclass(frozen=True)
class SurfaceQuadratureData:
    """
    Quadrature data of one surface triangulation.

    Attributes:
        points: (n, q, 3) physical quadrature points
        weights: (n, q) area-scaled weights
        basis: (n, q, 4) parent-tet barycentric values at the points
        gradients: (n, 4, 3) parent-tet basis gradients
        tet_vertices: (n, 4) global vertex ids of the parent tets
        normals: (n, 3) unit triangle normals
    """

    points: np.ndarray
    weights: np.ndarray
    basis: np.ndarray
    gradients: np.ndarray
    tet_vertices: np.ndarray
    normals: np.ndarray

    def interpolate(self, nodal: np.ndarray) -> np.ndarray:
        """P1 values of a nodal field at the quadrature points, (n, q)."""
        return np.einsum("nqi,ni->nq", self.basis, np.asarray(nodal, dtype=float)[self.tet_vertices])

    def gradient(self, nodal: np.ndarray) -> np.ndarray:
        """Constant full gradient of a nodal field per triangle, (n, 3)."""
        return np.einsum("ni,nij->nj", np.asarray(nodal, dtype=float)[self.tet_vertices], self.gradients)


def surface_quadrature_data(
    surface: SurfaceTriangulation,
    mesh: BackgroundMesh,
    quadrature: Optional[SurfaceQuadrature] = None,
) -> SurfaceQuadratureData:
    """Map the reference rule onto every surface triangle and its parent tetrahedron."""
    quadrature = quadrature or triangle_quadrature_deg5()
    tet_vertices = mesh.tets[surface.parent_tet]
    coords = mesh.vertices[tet_vertices]
    gradients = tet_basis_gradients(coords) if surface.n_triangles else np.empty((0, 4, 3))
    points = np.einsum("qk,nkj->nqj", quadrature.points, surface.triangles)
    basis = np.einsum("nqj,nij->nqi", points - coords[:, None, 0, :], gradients)
    basis[:, :, 0] += 1.0
    weights = surface.areas[:, None] * quadrature.weights[None, :]
    return SurfaceQuadratureData(
        points=points,
        weights=weights,
        basis=basis,
        gradients=gradients,
        tet_vertices=tet_vertices,
        normals=surface.normals,
    )


def _scatter(local: np.ndarray, data: SurfaceQuadratureData, dofs: DofMap) -> sp.csr_matrix:
    """Sum (n, 4, 4) element matrices into a CSR matrix over the active dofs."""
    ids = dofs.local[data.tet_vertices]
    if np.any(ids < 0):
        raise AssemblyError("Parent tetrahedron has a vertex outside the active dof set")
    rows = np.repeat(ids, 4, axis=1).ravel()
    cols = np.tile(ids, (1, 4)).ravel()
    matrix = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(dofs.size, dofs.size))
    return as_csr(matrix)


def assemble_surface_matrix(
    kind: Union[MatrixKind, str],
    surface: SurfaceTriangulation,
    mesh: BackgroundMesh,
    dofs: DofMap,
    velocity: Optional[VectorField] = None,
    t: float = 0.0,
    data: Optional[SurfaceQuadratureData] = None,
) -> sp.csr_matrix:
    """
    Assemble one surface bilinear form over the active dofs.

    Args:
        kind: mass, full_gradient_stiffness or convection
        surface: surface triangulation
        mesh: background mesh
        dofs: active dof numbering (vertices of cut tets)
        velocity: w(x, t) for the convection form
        t (float): time at which w is evaluated
        data: precomputed quadrature data (optional)

    Returns:
        sp.csr_matrix: mass = int u v, stiffness = int grad u . grad v with
        full bulk gradients, convection = int (w . grad u) v + (div_Gamma_h w) u v;
        row = test function v, column = trial function u

    Raises:
        AssemblyError: If convection is requested without a velocity
    """
    kind = MatrixKind(kind)
    if kind is MatrixKind.CONVECTION and velocity is None:
        raise AssemblyError("Convection matrix requires a velocity field")
    data = data or surface_quadrature_data(surface, mesh)

    if kind is MatrixKind.MASS:
        local = np.einsum("nq,nqi,nqj->nij", data.weights, data.basis, data.basis)
    elif kind is MatrixKind.STIFFNESS:
        area = data.weights.sum(axis=1)
        local = area[:, None, None] * np.einsum("nik,njk->nij", data.gradients, data.gradients)
    else:
        n, q, _ = data.points.shape
        w = np.asarray(velocity(data.points.reshape(-1, 3), t), dtype=float).reshape(n, q, 3)
        divergence = surface_divergence(velocity, data, t)
        w_dot_grad = np.einsum("nqk,njk->nqj", w, data.gradients)
        local = np.einsum("nq,nqi,nqj->nij", data.weights, data.basis, w_dot_grad)
        local += np.einsum("nq,nq,nqi,nqj->nij", data.weights, divergence, data.basis, data.basis)
    return _scatter(local, data, dofs)


def surface_divergence(
    velocity: VectorField,
    data: SurfaceQuadratureData,
    t: float = 0.0,
    step: float = FD_STEP,
) -> np.ndarray:
    """
    div_Gamma_h w = tr(Dw) - n . (Dw n) at every quadrature point, (n, q).

    Dw is taken by central differences of the analytic velocity; n is the
    discrete normal of each surface triangle.
    """
    n, q, _ = data.points.shape
    points = data.points.reshape(-1, 3)
    jacobian = np.empty((points.shape[0], 3, 3))
    for k in range(3):
        shift = np.zeros(3)
        shift[k] = step
        forward = np.asarray(velocity(points + shift, t), dtype=float).reshape(-1, 3)
        backward = np.asarray(velocity(points - shift, t), dtype=float).reshape(-1, 3)
        jacobian[:, :, k] = (forward - backward) / (2.0 * step)
    normals = np.repeat(data.normals, q, axis=0)
    trace = np.einsum("pii->p", jacobian)
    normal_part = np.einsum("pi,pij,pj->p", normals, jacobian, normals)
    return (trace - normal_part).reshape(n, q)


def assemble_surface_load(
    f: Union[ScalarField, np.ndarray],
    surface: SurfaceTriangulation,
    mesh: BackgroundMesh,
    dofs: DofMap,
    t: float = 0.0,
    data: Optional[SurfaceQuadratureData] = None,
) -> np.ndarray:
    """
    Load vector rhs_i = int f v_i over Gamma_h.

    Args:
        f: analytic callable f(x, t), or a full-length nodal P1 field
        surface: surface triangulation
        mesh: background mesh
        dofs: active dof numbering
        t (float): evaluation time for analytic f
        data: precomputed quadrature data (optional)

    Returns:
        np.ndarray: load vector over the active dofs
    """
    data = data or surface_quadrature_data(surface, mesh)
    if callable(f):
        n, q, _ = data.points.shape
        values = np.asarray(f(data.points.reshape(-1, 3), t), dtype=float).reshape(n, q)
    else:
        values = data.interpolate(f)
    local = np.einsum("nq,nq,nqi->ni", data.weights, values, data.basis)
    rhs = np.zeros(dofs.size)
    np.add.at(rhs, dofs.local[data.tet_vertices].ravel(), local.ravel())
    return rhs


def integrate_over_surface(
    values: Union[ScalarField, np.ndarray],
    surface: SurfaceTriangulation,
    mesh: BackgroundMesh,
    t: float = 0.0,
    data: Optional[SurfaceQuadratureData] = None,
) -> float:
    """Integral over Gamma_h of an analytic function or a nodal P1 field."""
    data = data or surface_quadrature_data(surface, mesh)
    if callable(values):
        n, q, _ = data.points.shape
        samples = np.asarray(values(data.points.reshape(-1, 3), t), dtype=float).reshape(n, q)
    else:
        samples = data.interpolate(values)
    return float(np.sum(data.weights * samples))


@dataclass
class SteadySolution:
    """
    Steady trace FEM solution.

    Attributes:
        dofs: active dof numbering
        values: solution on the active dofs
        solver: linear solve report
    """

    dofs: DofMap
    values: np.ndarray
    solver: SolverResult

    def nodal(self, n_vertices: int) -> np.ndarray:
        return self.dofs.prolong(self.values, n_vertices)


def solve_steady(
    alpha: float,
    nu: float,
    velocity: Optional[VectorField],
    f: Union[ScalarField, np.ndarray],
    field: LevelSetField,
    surface: SurfaceTriangulation,
    t: float = 0.0,
    **solver_options,
) -> SteadySolution:
    """
    Solve (alpha M + nu A + N) u = rhs on a fixed discrete surface.

    Args:
        alpha (float): reaction coefficient, must be positive
        nu (float): diffusion coefficient, must be positive
        velocity: tangential velocity w(x, t) or None
        f: source term, analytic or nodal
        field: level-set field that generated the surface
        surface: surface triangulation
        t (float): evaluation time for w and f
        **solver_options: forwarded to gmres_gs (rtol, restart, max_iters)

    Returns:
        SteadySolution: solution on N_Gamma

    Raises:
        AssemblyError: If alpha or nu is not positive
        SolverConvergenceError: If GMRES fails
    """
    if not alpha > 0.0 or not nu > 0.0:
        raise AssemblyError(f"alpha and nu must be positive, got alpha={alpha}, nu={nu}")
    mesh = field.mesh
    dofs = DofMap.from_field(field)
    data = surface_quadrature_data(surface, mesh)
    system = alpha * assemble_surface_matrix(MatrixKind.MASS, surface, mesh, dofs, data=data)
    system = system + nu * assemble_surface_matrix(MatrixKind.STIFFNESS, surface, mesh, dofs, data=data)
    if velocity is not None:
        system = system + assemble_surface_matrix(MatrixKind.CONVECTION, surface, mesh, dofs, velocity, t, data=data)
    rhs = assemble_surface_load(f, surface, mesh, dofs, t, data=data)
    result = solve_rescaled(system, rhs, **solver_options)
    logger.info(
        f"✅ Steady solve | dofs={dofs.size} | iterations={result.iterations} | "
        f"residual={result.residual:.2e}"
    )
    return SteadySolution(dofs=dofs, values=result.x, solver=result)


def surface_error_squares(
    data: SurfaceQuadratureData,
    nodal: np.ndarray,
    exact: ScalarField,
    exact_gradient: VectorField,
    t: float,
) -> Tuple[float, float]:
    """
    Squared L2 and H1-seminorm errors of a nodal P1 field on Gamma_h.

    The gradient error uses the tangential projection (I - n_h n_h^T) of the
    difference of full gradients on every triangle.

    Returns:
        Tuple[float, float]: (||u_e - u_h||^2, ||grad_Gamma_h (u_e - u_h)||^2)
    """
    n, q, _ = data.points.shape
    points = data.points.reshape(-1, 3)
    diff = data.interpolate(nodal) - np.asarray(exact(points, t), dtype=float).reshape(n, q)
    l2 = float(np.sum(data.weights * diff ** 2))

    grad_exact = np.asarray(exact_gradient(points, t), dtype=float).reshape(n, q, 3)
    grad_diff = data.gradient(nodal)[:, None, :] - grad_exact
    normal_part = np.einsum("nqj,nj->nq", grad_diff, data.normals)
    tangential = grad_diff - normal_part[:, :, None] * data.normals[:, None, :]
    h1 = float(np.sum(data.weights * np.einsum("nqj,nqj->nq", tangential, tangential)))
    return l2, h1

"""
Output Service

Writers for run artifacts: per-step and sweep CSV tables, legacy VTK
snapshots of the background mesh and of Gamma_h, sparse matrix triplets and
the FMM band table.
"""

import csv
import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import meshio
import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel

from app.models.response import RunSummary, StepDiagnostics
from app.services.fmm_service import NarrowBandState, band_table
from app.services.level_set_service import SurfaceTriangulation, evaluate_on_surface
from app.services.mesh_service import BackgroundMesh

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

STEP_COLUMNS = list(StepDiagnostics.__fields__)
CONVERGENCE_COLUMNS = list(RunSummary.__fields__)
MASS_COLUMNS = ["n", "t", "mass"]


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_rows(path: PathLike, columns: Sequence[str], rows: Iterable[BaseModel], append: bool = False) -> Path:
    """
    Write pydantic rows as CSV, one column per field name.

    Floats are written with repr() so repeated runs produce identical files.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as f:
        writer = csv.writer(f)
        if new_file:
            writer.writerow(columns)
        for row in rows:
            data = row.dict()
            writer.writerow([_format(data[c]) for c in columns])
    return path


def write_steps_csv(path: PathLike, steps: Sequence[StepDiagnostics]) -> Path:
    return write_rows(path, STEP_COLUMNS, steps)


def write_mass_csv(path: PathLike, steps: Sequence[StepDiagnostics]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MASS_COLUMNS)
        for step in steps:
            writer.writerow([step.n, repr(float(step.t)), repr(float(step.mass))])
    return path


def append_convergence_row(path: PathLike, summary: RunSummary) -> Path:
    return write_rows(path, CONVERGENCE_COLUMNS, [summary], append=True)


def write_mesh_vtk(path: PathLike, mesh: BackgroundMesh) -> Path:
    """Background mesh as a legacy ASCII VTK unstructured grid of tetrahedra."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = meshio.Mesh(points=mesh.vertices, cells=[("tetra", mesh.tets.astype(np.int32))])
    meshio.write(path, grid, file_format="vtk42", binary=False)
    logger.info(f"💾 Mesh written to {path}")
    return path


def surface_point_cloud(surface: SurfaceTriangulation):
    """
    Shared points of the triangle soup.

    Triangle corners on the same mesh edge are merged into one point.

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: points (m, 3), connectivity
        (n, 3) and, for every point, the index of one corner in the flattened soup
    """
    keys = surface.edge_vertices.reshape(-1, 2)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    points = surface.triangles.reshape(-1, 3)[first]
    return points, inverse.reshape(-1, 3), first


def write_surface_vtk(
    path: PathLike,
    surface: SurfaceTriangulation,
    mesh: BackgroundMesh,
    nodal: Optional[np.ndarray] = None,
    name: str = "u",
) -> Path:
    """
    Gamma_h as a legacy ASCII VTK triangle surface with one point-data field.

    Args:
        path: output file
        surface: surface triangulation
        mesh: background mesh
        nodal: full-length nodal field interpolated onto the surface points
        name: point-data array name
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points, connectivity, first = surface_point_cloud(surface)
    point_data = {}
    if nodal is not None:
        point_data[name] = evaluate_on_surface(surface, mesh, nodal).reshape(-1)[first]
    grid = meshio.Mesh(points=points, cells=[("triangle", connectivity.astype(np.int32))], point_data=point_data)
    meshio.write(path, grid, file_format="vtk42", binary=False)
    return path


def snapshot_name(step: int) -> str:
    return f"surface_{step:05d}.vtk"


def write_matrix_triplets(path: PathLike, matrix: sp.spmatrix) -> Path:
    """Matrix as 'row col value' lines sorted by row then column; header holds shape and nnz."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as f:
        f.write(f"# {matrix.shape[0]} {matrix.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            f.write(f"{i} {j} {float(v)!r}\n")
    logger.info(f"💾 Matrix triplets written to {path} ({coo.nnz} entries)")
    return path


def write_band_table(path: PathLike, state: NarrowBandState) -> Path:
    """(vertex, status, d, u_ext) table of every touched vertex."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter=" ")
        writer.writerow(["vertex", "status", "d", "u_ext"])
        for vertex, status, d, u in band_table(state):
            writer.writerow([vertex, status, repr(d), repr(u)])
    logger.info(f"💾 Band table written to {path}")
    return path

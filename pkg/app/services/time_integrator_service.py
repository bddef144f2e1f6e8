"""
Time Integrator Service

Advances the surface transport-diffusion problem with BDF1 or BDF2 on the
fixed background mesh. Each step interpolates the level set at t_n, extracts
Gamma_h^n, assembles and solves on the active dofs of the new cut strip with
the extended history fields on the right-hand side, and finally extends the
new solution to a narrow band with the fast marching method.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from app.models.request import TimeScheme
from app.services.assembly_service import (
    DofMap,
    LinearSystem,
    MatrixKind,
    ScalarField,
    VectorField,
    assemble_surface_load,
    assemble_surface_matrix,
    integrate_over_surface,
    surface_error_squares,
    surface_quadrature_data,
)
from app.services.fmm_service import NarrowBandState, extend
from app.services.level_set_service import (
    LevelSetField,
    LevelSetFunction,
    SurfaceTriangulation,
    cut_strip,
    extract_surface,
    interpolate_levelset,
)
from app.services.mesh_service import BackgroundMesh
from app.services.solver_service import SolverResult, solve_rescaled

logger = logging.getLogger(__name__)


class BandInclusionError(RuntimeError):
    """Raised when the new cut strip leaves the previous extension band."""
    pass


class StepError(RuntimeError):
    """Raised when a time step fails; carries the step index and time."""

    def __init__(self, step: int, t: float, cause: Exception):
        self.step = step
        self.t = t
        self.cause = cause
        super().__init__(f"Step {step} (t={t:.6g}) failed: {type(cause).__name__}: {cause}")


@dataclass(frozen=True)
class TransportProblem:
    """
    Analytic data of a surface transport-diffusion problem.

    Attributes:
        phi: level set phi(x, t)
        velocity: transport velocity w(x, t), (n, 3)
        initial: initial concentration u_0(x), sampled at vertices
        source: right-hand side f(x, t) or None for f = 0
        exact: exact solution extension u_e(x, t) or None
        exact_gradient: gradient of u_e, (n, 3), or None
    """

    phi: LevelSetFunction
    velocity: VectorField
    initial: Callable[[np.ndarray], np.ndarray]
    source: Optional[ScalarField] = None
    exact: Optional[ScalarField] = None
    exact_gradient: Optional[VectorField] = None

    @property
    def has_exact(self) -> bool:
        return self.exact is not None and self.exact_gradient is not None


@dataclass
class ExtendedField:
    """
    Solution at one time level extended to its narrow band.

    Attributes:
        time: t_n
        values: full-length nodal field, nan outside the finished set
        finished: mask of the vertices where values are defined
        band_tets: tets of the widened strip
        w_max: |w|_inf over the finished band vertices
    """

    time: float
    values: np.ndarray
    finished: np.ndarray
    band_tets: np.ndarray
    w_max: float = 0.0


@dataclass
class StepRecord:
    """
    Diagnostics of one time level.

    Attributes:
        n: step index
        t: time t_n
        active_dofs: |N_Gamma^n|
        band_dofs: vertices of the band S~(Gamma_h^n)
        solver_iterations: GMRES iterations (0 at n = 0)
        solver_residual: final relative residual (0 at n = 0)
        mass: M_h(t_n)
        err_l2_sq: squared L2(Gamma_h^n) error, None without exact solution
        err_h1_sq: squared tangential-gradient error, None without exact solution
        area: |Gamma_h^n|
    """

    n: int
    t: float
    active_dofs: int
    band_dofs: int
    solver_iterations: int
    solver_residual: float
    mass: float
    err_l2_sq: Optional[float] = None
    err_h1_sq: Optional[float] = None
    area: float = 0.0

    @property
    def err_l2(self) -> Optional[float]:
        return None if self.err_l2_sq is None else float(np.sqrt(self.err_l2_sq))

    @property
    def err_h1(self) -> Optional[float]:
        return None if self.err_h1_sq is None else float(np.sqrt(self.err_h1_sq))


@dataclass
class TimeSchemeState:
    """
    State of the time loop.

    Attributes:
        problem: analytic problem data
        mesh: background mesh
        scheme: BDF1 or BDF2
        dt: time step
        nu: diffusion coefficient
        n: index of the last completed level
        t: time of the last completed level
        history: extended fields, most recent last (at most scheme.steps kept)
        surface: Gamma_h of the last completed level
        nodal: last solution as a full-length nodal field (nan off N_Gamma)
        band: FMM state of the last completed level
        system: last assembled linear system
        records: diagnostics of all completed levels
    """

    problem: TransportProblem
    mesh: BackgroundMesh
    scheme: TimeScheme
    dt: float
    nu: float
    n: int = 0
    t: float = 0.0
    history: List[ExtendedField] = field(default_factory=list)
    surface: Optional[SurfaceTriangulation] = None
    nodal: Optional[np.ndarray] = None
    band: Optional[NarrowBandState] = None
    system: Optional[LinearSystem] = None
    records: List[StepRecord] = field(default_factory=list)

    @property
    def L(self) -> int:
        return self.scheme.steps

    @property
    def u_prev1(self) -> Optional[ExtendedField]:
        return self.history[-1] if self.history else None

    @property
    def u_prev2(self) -> Optional[ExtendedField]:
        return self.history[-2] if len(self.history) >= 2 else None


def max_velocity(velocity: VectorField, points: np.ndarray, t: float) -> float:
    """max |w| over the given points at time t."""
    w = np.asarray(velocity(points, t), dtype=float).reshape(-1, 3)
    return float(np.linalg.norm(w, axis=1).max()) if w.size else 0.0


def stop_radius(mesh: BackgroundMesh, w_max: float, dt: float, L: int) -> float:
    """FMM growth radius h + L |w|_inf dt."""
    return mesh.h + L * w_max * dt


def compute_band(
    state: NarrowBandState,
    cut_tets: np.ndarray,
    w_max: float,
    dt: float,
    L: int,
) -> np.ndarray:
    """
    Widened strip S~(Gamma_h): cut tets plus every tet with a vertex whose
    FMM distance is below L |w|_inf dt.

    Args:
        state: marched FMM state
        cut_tets: S(Gamma_h)
        w_max: |w|_inf over the band vertices
        dt: time step
        L: number of history levels

    Returns:
        np.ndarray: sorted tet ids
    """
    width = L * w_max * dt
    near = np.flatnonzero(state.finished & (state.d < width))
    return np.union1d(cut_tets, state.mesh.tets_of_many(near))


def _extend_level(
    surface: SurfaceTriangulation,
    mesh: BackgroundMesh,
    cut_tets: np.ndarray,
    active: np.ndarray,
    values: np.ndarray,
    velocity: VectorField,
    dt: float,
    L: int,
    t: float,
):
    """
    Extend one level and build its band.

    The march radius uses |w|_inf over N_Gamma. The band width uses |w|_inf
    over the finished band vertices, so S~(Gamma_h) is measured with the
    velocity of the band it describes; the march is not repeated.
    """
    surface_max = max_velocity(velocity, mesh.vertices[active], t)
    band = extend(surface, mesh, values, stop_radius(mesh, surface_max, dt, L))
    w_max = max_velocity(velocity, mesh.vertices[band.finished_vertices], t)
    band_tets = compute_band(band, cut_tets, w_max, dt, L)
    logger.debug(f"📏 Band at t={t:.6g} | |w| on N_Gamma={surface_max:.4g} | |w| on band={w_max:.4g}")
    extended = ExtendedField(
        time=t, values=band.extended_values(), finished=band.finished, band_tets=band_tets, w_max=w_max,
    )
    return band, extended


def _record(
    state: TimeSchemeState,
    n: int,
    t: float,
    surface: SurfaceTriangulation,
    data,
    nodal: np.ndarray,
    active: np.ndarray,
    extended: ExtendedField,
    solver: Optional[SolverResult],
) -> StepRecord:
    mass = integrate_over_surface(nodal, surface, state.mesh, t, data=data)
    err_l2_sq = err_h1_sq = None
    if state.problem.has_exact:
        err_l2_sq, err_h1_sq = surface_error_squares(
            data, nodal, state.problem.exact, state.problem.exact_gradient, t
        )
    return StepRecord(
        n=n,
        t=t,
        active_dofs=int(active.size),
        band_dofs=int(np.unique(state.mesh.tets[extended.band_tets]).size),
        solver_iterations=0 if solver is None else solver.iterations,
        solver_residual=0.0 if solver is None else solver.residual,
        mass=mass,
        err_l2_sq=err_l2_sq,
        err_h1_sq=err_h1_sq,
        area=surface.total_area,
    )


def initialize(
    problem: TransportProblem,
    mesh: BackgroundMesh,
    dt: float,
    nu: float,
    scheme: TimeScheme = TimeScheme.BDF2,
) -> TimeSchemeState:
    """
    Level 0: interpolate u_0 on N_Gamma^0 and extend it with the scheme's L.

    Returns:
        TimeSchemeState: state holding u^{e,0} and the n = 0 record
    """
    scheme = TimeScheme(scheme)
    state = TimeSchemeState(problem=problem, mesh=mesh, scheme=scheme, dt=dt, nu=nu)
    field0 = interpolate_levelset(problem.phi, mesh, 0.0)
    surface = extract_surface(field0)
    cut_tets, active = cut_strip(field0)
    values = np.asarray(problem.initial(mesh.vertices[active]), dtype=float).reshape(-1)
    band, extended = _extend_level(surface, mesh, cut_tets, active, values, problem.velocity, dt, state.L, 0.0)

    nodal = np.full(mesh.n_vertices, np.nan)
    nodal[active] = values
    data = surface_quadrature_data(surface, mesh)
    state.history.append(extended)
    state.surface, state.nodal, state.band = surface, nodal, band
    state.records.append(_record(state, 0, 0.0, surface, data, nodal, active, extended, None))
    logger.info(
        f"🚀 Initial level | scheme={scheme.value} | dt={dt:g} | active_dofs={active.size} | "
        f"band_vertices={state.records[0].band_dofs} | mass={state.records[0].mass:.6f}"
    )
    return state


def _check_band_inclusion(active: np.ndarray, history: List[ExtendedField], n: int) -> None:
    for level in history:
        outside = active[~level.finished[active]]
        if outside.size:
            raise BandInclusionError(
                f"{outside.size} active vertices of step {n} (e.g. vertex {int(outside[0])}) lie outside the "
                f"extension band of t={level.time:.6g}; reduce dt or increase the band width L"
            )


def advance_one_step(
    state: TimeSchemeState,
    level_set: Optional[LevelSetField] = None,
    **solver_options,
) -> TimeSchemeState:
    """
    Advance from t_{n-1} to t_n = n dt.

    BDF1: ((1/dt) M + nu A + N) u = (1/dt) M u^{e,n-1} + F.
    BDF2: ((3/(2dt)) M + nu A + N) u = (1/(2dt)) M (4u^{e,n-1} - u^{e,n-2}) + F.
    The first BDF2 step uses BDF1. History fields are read at the quadrature
    points of Gamma_h^n through their P1 interpolant.

    Args:
        state: time loop state (modified in place)
        level_set: level set at t_n; interpolated from the problem when omitted
        **solver_options: forwarded to the GMRES solver

    Returns:
        TimeSchemeState: the updated state

    Raises:
        BandInclusionError: If N_Gamma^n is not covered by the history bands
        SolverConvergenceError: If the linear solve fails
    """
    mesh, problem, dt = state.mesh, state.problem, state.dt
    n = state.n + 1
    t = n * dt
    level_set = level_set or interpolate_levelset(problem.phi, mesh, t)
    surface = extract_surface(level_set)
    cut_tets, active = cut_strip(level_set)

    levels = 2 if state.scheme is TimeScheme.BDF2 and state.u_prev2 is not None else 1
    history = state.history[-levels:]
    _check_band_inclusion(active, history, n)

    dofs = DofMap(active, mesh.n_vertices)
    data = surface_quadrature_data(surface, mesh)
    mass_matrix = assemble_surface_matrix(MatrixKind.MASS, surface, mesh, dofs, data=data)
    stiffness = assemble_surface_matrix(MatrixKind.STIFFNESS, surface, mesh, dofs, data=data)
    convection = assemble_surface_matrix(MatrixKind.CONVECTION, surface, mesh, dofs, problem.velocity, t, data=data)

    u1 = state.history[-1].values
    if levels == 1:
        matrix = (1.0 / dt) * mass_matrix + state.nu * stiffness + convection
        rhs = (1.0 / dt) * assemble_surface_load(u1, surface, mesh, dofs, t, data=data)
    else:
        u2 = state.history[-2].values
        matrix = (1.5 / dt) * mass_matrix + state.nu * stiffness + convection
        rhs = (0.5 / dt) * assemble_surface_load(4.0 * u1 - u2, surface, mesh, dofs, t, data=data)
    if problem.source is not None:
        rhs = rhs + assemble_surface_load(problem.source, surface, mesh, dofs, t, data=data)

    result = solve_rescaled(matrix, rhs, x0=dofs.restrict(u1), **solver_options)
    logger.debug(f"🧮 Step {n} solve | dofs={dofs.size} | iterations={result.iterations} | residual={result.residual:.2e}")

    band, extended = _extend_level(surface, mesh, cut_tets, active, result.x, problem.velocity, dt, state.L, t)

    nodal = dofs.prolong(result.x, mesh.n_vertices)
    state.history.append(extended)
    del state.history[:-state.L]
    state.n, state.t = n, t
    state.surface, state.nodal, state.band = surface, nodal, band
    state.system = LinearSystem(dofs=dofs, matrix=matrix.tocsr(), rhs=rhs)
    state.records.append(_record(state, n, t, surface, data, nodal, active, extended, result))
    return state


StepObserver = Callable[[TimeSchemeState], None]


def run_transient(
    problem: TransportProblem,
    mesh: BackgroundMesh,
    dt: float,
    n_steps: int,
    nu: float = 1.0,
    scheme: TimeScheme = TimeScheme.BDF2,
    observer: Optional[StepObserver] = None,
    **solver_options,
) -> TimeSchemeState:
    """
    Run the time loop t_n = n dt for n = 1..n_steps.

    Args:
        problem: analytic problem data
        mesh: background mesh
        dt: uniform time step
        n_steps: number of steps N (0 returns the initial level only)
        nu: diffusion coefficient
        scheme: BDF1 or BDF2
        observer: called after every completed level, including n = 0
        **solver_options: forwarded to the GMRES solver

    Returns:
        TimeSchemeState: final state with one record per level

    Raises:
        StepError: If any step fails, naming the step index
    """
    try:
        state = initialize(problem, mesh, dt, nu, scheme)
    except Exception as exc:
        raise StepError(0, 0.0, exc) from exc
    if observer is not None:
        observer(state)

    for n in range(1, n_steps + 1):
        try:
            advance_one_step(state, **solver_options)
        except Exception as exc:
            logger.error(f"❌ Step {n} failed: {exc}")
            raise StepError(n, n * dt, exc) from exc
        record = state.records[-1]
        logger.info(
            f"⏱️ Step {n}/{n_steps} | t={record.t:.6g} | dofs={record.active_dofs} | "
            f"iters={record.solver_iterations} | mass={record.mass:.6f}"
        )
        if observer is not None:
            observer(state)
    return state

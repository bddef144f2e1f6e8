"""
Sparse Solver Service

Compressed-row linear algebra for the trace FEM systems: symmetric
diagonal rescaling and restarted GMRES, left-preconditioned by one forward
Gauss-Seidel sweep. The Krylov iteration itself is scipy's; this module
owns the preconditioner, the residual bookkeeping and the error contract.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres, spsolve_triangular

from app.config.settings import get_settings

logger = logging.getLogger(__name__)


class SolverError(ValueError):
    """Raised for inputs the solver cannot accept."""
    pass


class SolverConvergenceError(RuntimeError):
    """Raised when GMRES does not reach the requested tolerance."""

    def __init__(self, iterations: int, residual: float, history: List[float]):
        self.iterations = iterations
        self.residual = residual
        self.history = history
        super().__init__(
            f"GMRES did not converge after {iterations} iterations "
            f"(relative residual {residual:.3e})"
        )


@dataclass
class SolverResult:
    """
    Outcome of one linear solve.

    Attributes:
        x: solution vector
        iterations: total inner GMRES iterations
        residual: relative residual ||b - A x|| / ||b|| recomputed at exit
        history: preconditioned residual norms reported by GMRES
    """

    x: np.ndarray
    iterations: int
    residual: float
    history: List[float] = field(default_factory=list)


def as_csr(A) -> sp.csr_matrix:
    """CSR copy with sorted, unique column indices per row."""
    A = sp.csr_matrix(A, dtype=float)
    A.sum_duplicates()
    A.sort_indices()
    return A


def diagonal_rescale(A, b: np.ndarray) -> Tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """
    Symmetric diagonal rescaling D^{-1/2} A D^{-1/2}.

    Args:
        A: square sparse matrix with a positive diagonal
        b: right-hand side

    Returns:
        Tuple: (scaled matrix, scaled rhs, scaling vector s); the original
        solution is recovered as x = s * x_scaled

    Raises:
        SolverError: If dimensions disagree or a diagonal entry is not positive
    """
    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise SolverError(f"Inconsistent dimensions: matrix {A.shape}, rhs {b.shape}")
    diag = A.diagonal()
    bad = np.flatnonzero(~(diag > 0.0))
    if bad.size:
        raise SolverError(
            f"Non-positive diagonal entry {diag[bad[0]]:.3e} at row {bad[0]}; "
            f"check assembly or empty-support degrees of freedom"
        )
    scale = 1.0 / np.sqrt(diag)
    S = sp.diags(scale)
    return as_csr(S @ A @ S), scale * b, scale


class GaussSeidelPreconditioner(LinearOperator):
    """
    One forward Gauss-Seidel sweep, z = (D + L)^{-1} r.

    The sorted CSR lower triangle and a work vector are set up once. Each
    application copies r into the work vector and hands it to the triangular
    solver as an overwritable right-hand side; neither is reallocated.
    """

    def __init__(self, A: sp.csr_matrix):
        self._lower = sp.tril(A, format="csr")
        self._lower.sort_indices()
        self.workspace = np.empty(A.shape[0])
        super().__init__(dtype=float, shape=A.shape)

    def _matvec(self, r):
        np.copyto(self.workspace, np.ravel(r))
        return spsolve_triangular(
            self._lower, self.workspace, lower=True, overwrite_A=True, overwrite_b=True,
        )


def gmres_gs(
    A,
    b: np.ndarray,
    rtol: Optional[float] = None,
    restart: Optional[int] = None,
    max_iters: Optional[int] = None,
    x0: Optional[np.ndarray] = None,
) -> SolverResult:
    """
    Restarted GMRES with a forward Gauss-Seidel left preconditioner.

    Args:
        A: square sparse matrix
        b: right-hand side
        rtol (float, optional): relative tolerance on the unpreconditioned residual
        restart (int, optional): Krylov dimension per cycle
        max_iters (int, optional): cap on total inner iterations
        x0 (np.ndarray, optional): initial guess

    Returns:
        SolverResult: solution with ||b - A x|| <= rtol ||b||

    Raises:
        SolverError: On inconsistent dimensions
        SolverConvergenceError: If max_iters is reached first
    """
    settings = get_settings()
    rtol = settings.solver_rtol if rtol is None else rtol
    restart = settings.gmres_restart if restart is None else restart
    max_iters = settings.gmres_max_iters if max_iters is None else max_iters

    A = as_csr(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape[1] != n or b.shape != (n,):
        raise SolverError(f"Inconsistent dimensions: matrix {A.shape}, rhs {b.shape}")

    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return SolverResult(x=np.zeros(n), iterations=0, residual=0.0)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    residual = float(np.linalg.norm(b - A @ x)) / b_norm
    if residual <= rtol:
        return SolverResult(x=x, iterations=0, residual=residual)

    M = GaussSeidelPreconditioner(A)
    history: List[float] = []
    iterations = 0

    def count(pr_norm):
        history.append(float(pr_norm))

    # One restart cycle per call so the unpreconditioned residual is checked between cycles
    while iterations < max_iters:
        cycle = min(restart, max_iters - iterations)
        before = len(history)
        x, _ = gmres(
            A, b, x0=x, rtol=rtol, atol=0.0, restart=cycle, maxiter=1,
            M=M, callback=count, callback_type="pr_norm",
        )
        iterations += max(len(history) - before, 1)
        residual = float(np.linalg.norm(b - A @ x)) / b_norm
        logger.debug(f"🔁 GMRES cycle | iterations={iterations} | residual={residual:.3e}")
        if residual <= rtol:
            return SolverResult(x=x, iterations=iterations, residual=residual, history=history)

    logger.error(f"❌ GMRES stalled | iterations={iterations} | residual={residual:.3e}")
    raise SolverConvergenceError(iterations, residual, history)


def solve_rescaled(A, b: np.ndarray, x0: Optional[np.ndarray] = None, **options) -> SolverResult:
    """
    Rescale, solve with GMRES + Gauss-Seidel, and map back.

    The reported residual is the relative residual of the rescaled system,
    which is the one GMRES is asked to reduce.
    """
    A_hat, b_hat, scale = diagonal_rescale(A, b)
    x0_hat = None if x0 is None else np.asarray(x0, dtype=float) / scale
    result = gmres_gs(A_hat, b_hat, x0=x0_hat, **options)
    result.x = scale * result.x
    return result

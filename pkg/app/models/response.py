"""
Response Models

Pydantic models for run results. Every CSV row and every table row printed
by the CLI is produced from one of these models, so the column sets stay
consistent between runs and sweeps.
"""

from typing import List, Optional

from pydantic import BaseModel, Field


class StepDiagnostics(BaseModel):
    """
    Model for one time-step row of steps.csv.

    Attributes:
        n (int): Step index
        t (float): Time t_n
        active_dofs (int): |N_Gamma^n|, the system dimension
        band_dofs (int): Vertices of the extension band
        solver_iterations (int): GMRES iterations of this step
        solver_residual (float): Final relative residual of this step
        mass (float): Total discrete mass M_h(t_n)
        err_l2 (Optional[float]): L2(Gamma_h^n) error when an exact solution is known
        err_h1 (Optional[float]): H1(Gamma_h^n) tangential gradient error
    """

    n: int = Field(..., description="Step index", ge=0, example=4)
    t: float = Field(..., description="Time t_n", example=0.25)
    active_dofs: int = Field(..., description="Active degrees of freedom", ge=0, example=1840)
    band_dofs: int = Field(..., description="Vertices of the extension band", ge=0, example=3125)
    solver_iterations: int = Field(0, description="GMRES iterations", ge=0, example=12)
    solver_residual: float = Field(0.0, description="Relative residual", ge=0.0, example=7.1e-7)
    mass: float = Field(..., description="Total discrete mass", example=12.5663)
    err_l2: Optional[float] = Field(None, description="Surface L2 error", ge=0.0, example=0.0123)
    err_h1: Optional[float] = Field(None, description="Surface H1 error", ge=0.0, example=0.21)

    class Config:
        """Pydantic configuration."""
        schema_extra = {
            "example": {
                "n": 4,
                "t": 0.25,
                "active_dofs": 1840,
                "band_dofs": 3125,
                "solver_iterations": 12,
                "solver_residual": 7.1e-7,
                "mass": 12.5663,
                "err_l2": 0.0123,
                "err_h1": 0.21,
            }
        }


class ErrorReport(BaseModel):
    """
    Model for the trapezoidal-in-time error norms of a run.

    Attributes:
        err_l2_l2 (Optional[float]): err_{L2(L2)}, None without an exact solution
        err_l2_h1 (Optional[float]): err_{L2(H1)}, None without an exact solution
        mass (List[float]): M_h(t_n) for n = 0..N
        step_l2 (List[Optional[float]]): Instantaneous L2 errors
        step_h1 (List[Optional[float]]): Instantaneous H1 errors
    """

    err_l2_l2: Optional[float] = Field(None, description="L2(L2) error norm", ge=0.0, example=0.04013)
    err_l2_h1: Optional[float] = Field(None, description="L2(H1) error norm", ge=0.0, example=0.37954)
    mass: List[float] = Field(default_factory=list, description="Mass series M_h(t_n)")
    step_l2: List[Optional[float]] = Field(default_factory=list, description="Per-step L2 errors")
    step_h1: List[Optional[float]] = Field(default_factory=list, description="Per-step H1 errors")

    @property
    def has_errors(self) -> bool:
        return self.err_l2_l2 is not None


class RunSummary(BaseModel):
    """
    Model for one row of convergence.csv and the CLI table.

    Attributes:
        experiment_id (int): Experiment number
        scheme (str): bdf1 or bdf2
        h (float): Mesh size
        dt (float): Time step
        T_final (float): Final time
        n_steps (int): Number of time steps
        err_l2_h1 (Optional[float]): err_{L2(H1)}
        err_l2_l2 (Optional[float]): err_{L2(L2)}
        mass_initial (float): M_h(0)
        mass_final (float): M_h(T)
        mass_error (float): |M_h(T) - M_h(0)|
        max_iterations (int): Largest per-step GMRES iteration count
    """

    experiment_id: int = Field(..., description="Experiment number", example=1)
    scheme: str = Field(..., description="Time scheme", example="bdf2")
    h: float = Field(..., description="Mesh size", gt=0.0, example=0.125)
    dt: float = Field(..., description="Time step", gt=0.0, example=0.03125)
    T_final: float = Field(..., description="Final time", ge=0.0, example=1.0)
    n_steps: int = Field(..., description="Number of time steps", ge=0, example=32)
    err_l2_h1: Optional[float] = Field(None, description="L2(H1) error norm", example=0.37954)
    err_l2_l2: Optional[float] = Field(None, description="L2(L2) error norm", example=0.04013)
    mass_initial: float = Field(..., description="Initial discrete mass", example=12.566)
    mass_final: float = Field(..., description="Final discrete mass", example=12.566)
    mass_error: float = Field(..., description="Absolute mass drift", ge=0.0, example=1e-3)
    max_iterations: int = Field(0, description="Largest GMRES iteration count", ge=0, example=14)

    def table_row(self) -> str:
        """Fixed-width row for standard output."""
        def fmt(value):
            return "-" if value is None else f"{value:.6g}"
        return (
            f"exp={self.experiment_id} scheme={self.scheme} h={self.h:g} dt={self.dt:g} "
            f"N={self.n_steps} err_L2(H1)={fmt(self.err_l2_h1)} err_L2(L2)={fmt(self.err_l2_l2)} "
            f"mass_error={self.mass_error:.6g}"
        )

    class Config:
        """Pydantic configuration."""
        schema_extra = {
            "example": {
                "experiment_id": 1,
                "scheme": "bdf2",
                "h": 0.125,
                "dt": 0.03125,
                "T_final": 1.0,
                "n_steps": 32,
                "err_l2_h1": 0.37954,
                "err_l2_l2": 0.04013,
                "mass_initial": 12.566,
                "mass_final": 12.566,
                "mass_error": 0.001,
                "max_iterations": 14,
            }
        }

"""
Request Models

Pydantic models for validating experiment runs before any computation
starts. These models ensure consistent parameters across the CLI, the
config file and sweep files.
"""

from enum import Enum
from fractions import Fraction
from typing import Optional

from pydantic import BaseModel, Field, validator

from app.config.experiments import EXPERIMENTS, get_experiment_defaults

# Relative tolerance for "T is a multiple of dt" and "h divides the box"
GRID_TOLERANCE = 1e-9


def parse_number(value) -> float:
    """Accept plain numbers and fraction strings such as '1/8'."""
    if isinstance(value, str):
        text = value.strip()
        if not text:
            raise ValueError("empty number")
        try:
            return float(Fraction(text))
        except (ValueError, ZeroDivisionError):
            return float(text)
    return float(value)


def _is_multiple(length: float, step: float) -> bool:
    count = round(length / step)
    return count >= 1 and abs(count * step - length) <= GRID_TOLERANCE * max(abs(length), 1.0)


class TimeScheme(str, Enum):
    """Backward differentiation schemes and their step counts."""
    BDF1 = "bdf1"
    BDF2 = "bdf2"

    @property
    def steps(self) -> int:
        """Number of history levels L."""
        return 1 if self is TimeScheme.BDF1 else 2


class ExperimentConfig(BaseModel):
    """
    Model for one experiment run.

    Attributes:
        experiment_id (int): Experiment number 1..5
        h (float): Background cube side length
        dt (float): Uniform time step
        T_final (Optional[float]): Final time (experiment default if omitted)
        nu (Optional[float]): Diffusion coefficient (experiment default if omitted)
        scheme (TimeScheme): bdf1 or bdf2
        output_dir (str): Directory for CSV and VTK output
        snapshot_every (int): VTK surface snapshot cadence (0 disables)
    """

    experiment_id: int = Field(..., description="Experiment number", example=1)
    h: float = Field(..., description="Background mesh cube side length", gt=0.0, example=0.25)
    dt: float = Field(..., description="Time step", gt=0.0, example=0.0625)
    T_final: Optional[float] = Field(None, description="Final time", example=1.0)
    nu: Optional[float] = Field(None, description="Diffusion coefficient", example=1.0)
    scheme: TimeScheme = Field(TimeScheme.BDF2, description="Time integration scheme", example="bdf2")
    output_dir: str = Field("results", description="Output directory", example="results/exp1")
    snapshot_every: int = Field(0, description="Write a surface snapshot every k steps", ge=0, example=4)
    dump_mesh: bool = Field(False, description="Write the background mesh as VTK")
    dump_matrix: bool = Field(False, description="Write the final-step matrix as triplets")
    dump_band: bool = Field(False, description="Write the final-step extension band table")

    @validator("h", "dt", "T_final", "nu", pre=True)
    def parse_fractions(cls, v):
        """Allow '1/8' style input."""
        if v is None:
            return v
        return parse_number(v)

    @validator("experiment_id")
    def validate_experiment_id(cls, v):
        """Validate that the experiment exists."""
        if v not in EXPERIMENTS:
            raise ValueError(f"Unknown experiment {v}; choose one of {sorted(EXPERIMENTS)}")
        return v

    @validator("h")
    def validate_h(cls, v, values):
        """Validate that h divides every side of the experiment's box."""
        experiment_id = values.get("experiment_id")
        if experiment_id is None:
            return v
        for lo, hi in get_experiment_defaults(experiment_id)["box"]:
            if not _is_multiple(hi - lo, v):
                raise ValueError(f"h={v} does not divide the box side {hi - lo}")
        return v

    @validator("T_final", always=True)
    def validate_T_final(cls, v, values):
        """Default to the experiment's final time and require an integral step count."""
        experiment_id = values.get("experiment_id")
        if v is None and experiment_id is not None:
            v = get_experiment_defaults(experiment_id)["T"]
        if v is None:
            return v
        if v < 0.0:
            raise ValueError("T_final must be non-negative")
        dt = values.get("dt")
        if dt is not None and v > 0.0 and not _is_multiple(v, dt):
            raise ValueError(f"T_final={v} is not an integral multiple of dt={dt}")
        return v

    @validator("nu", always=True)
    def validate_nu(cls, v, values):
        experiment_id = values.get("experiment_id")
        if v is None and experiment_id is not None:
            v = get_experiment_defaults(experiment_id)["nu"]
        if v is not None and v <= 0.0:
            raise ValueError("nu must be positive")
        return v

    @property
    def n_steps(self) -> int:
        """Number of time steps N = T_final / dt."""
        return int(round(self.T_final / self.dt))

    class Config:
        """Pydantic configuration."""
        schema_extra = {
            "example": {
                "experiment_id": 1,
                "h": 0.25,
                "dt": 0.0625,
                "T_final": 1.0,
                "nu": 1.0,
                "scheme": "bdf2",
                "output_dir": "results/exp1",
                "snapshot_every": 0,
            }
        }


class SweepCell(BaseModel):
    """
    Model for one (h, dt) cell of a convergence sweep.

    Attributes:
        h (float): Background cube side length
        dt (float): Time step
    """

    h: float = Field(..., description="Background mesh cube side length", gt=0.0, example=0.125)
    dt: float = Field(..., description="Time step", gt=0.0, example=0.03125)

    @validator("h", "dt", pre=True)
    def parse_fractions(cls, v):
        return parse_number(v)

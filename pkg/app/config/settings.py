"""
Runtime Settings

Environment-driven settings for the simulator. Values are read from the
process environment (prefix ``TRACEFEM_``) and from a ``.env`` file in the
working directory, so a run can be tuned without touching the code.
"""

import logging
from functools import lru_cache

from pydantic import BaseSettings, Field, validator

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """
    Solver, geometry and output settings shared by all services.

    Attributes:
        solver_rtol (float): Relative residual tolerance for GMRES
        gmres_restart (int): Krylov subspace dimension before a restart
        gmres_max_iters (int): Cap on the total number of GMRES iterations
        sign_cleanup_factor (float): Nodal |phi| below factor*h is moved to +factor*h
        projection_tolerance (float): Slack on barycentric inclusion tests in the FMM
        output_dir (str): Default directory for CSV and VTK output
        log_level (str): Root logging level
        snapshot_every (int): Write a surface VTK file every k steps (0 disables)
    """

    solver_rtol: float = Field(1e-6, gt=0.0, lt=1.0)
    gmres_restart: int = Field(100, ge=1)
    gmres_max_iters: int = Field(5000, ge=1)
    sign_cleanup_factor: float = Field(1e-12, gt=0.0)
    projection_tolerance: float = Field(1e-12, ge=0.0)
    output_dir: str = "results"
    log_level: str = "INFO"
    snapshot_every: int = Field(0, ge=0)

    @validator("log_level")
    def validate_log_level(cls, v):
        """Accept any standard logging level name."""
        level = v.strip().upper()
        if level not in logging._nameToLevel:
            raise ValueError(f"Unknown log level: {v}")
        return level

    class Config:
        """Pydantic configuration."""
        env_prefix = "TRACEFEM_"
        env_file = ".env"
        env_file_encoding = "utf-8"


@lru_cache()
def get_settings() -> Settings:
    """Return the process-wide settings instance."""
    settings = Settings()
    logger.debug(f"⚙️ Settings loaded: {settings.dict()}")
    return settings

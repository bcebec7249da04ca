"""
Application Configuration
"""
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings"""

    # Application
    APP_NAME: str = "Primal-Dual Adaptive FEM"
    DEBUG: bool = False

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None

    # Parallel element loops
    AFEM_THREADS: int = 1

    # ADMM defaults
    ADMM_TAU0: float = 1.0
    ADMM_MAX_ITERS: int = 5000
    ADMM_ADAPT: str = "residual_balance"
    TOL_FACTOR: float = 1.0

    # Quadrature subdivision levels (one level = 4 sub-triangles)
    QUADRATURE_INTERFACE_LEVELS: int = 1
    QUADRATURE_SINGULAR_LEVELS: int = 2
    ERROR_INTERFACE_LEVELS: int = 3

    # Reference energies
    REFERENCE_CACHE_DIR: Path = Path(".afem_cache")

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True)


# Create global settings instance
settings = Settings()

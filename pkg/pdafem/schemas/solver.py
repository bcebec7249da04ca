"""
Solver Schemas
Pydantic models for the ADMM driver
"""
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from pdafem.core.config import settings


class AdmmConfig(BaseModel):
    """ADMM step-size and stopping parameters"""
    tau0: float = Field(default=settings.ADMM_TAU0, gt=0)
    adapt: Literal["fixed", "residual_balance"] = settings.ADMM_ADAPT
    tol: float = Field(default=1e-8, gt=0)
    max_iters: int = Field(default=settings.ADMM_MAX_ITERS, ge=1)
    balance_ratio: float = Field(default=10.0, gt=1)
    balance_factor: float = Field(default=2.0, gt=1)
    balance_every: int = Field(default=5, ge=1)

    model_config = ConfigDict(frozen=True)

"""
Pydantic schemas
"""
from pdafem.schemas.run import RunConfig, ConvergenceRecord
from pdafem.schemas.solver import AdmmConfig

__all__ = ["RunConfig", "ConvergenceRecord", "AdmmConfig"]

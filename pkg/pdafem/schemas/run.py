"""
Run Schemas
Pydantic models for adaptive runs and their per-level records
"""
from pathlib import Path
from typing import ClassVar, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator


BENCHMARK_PROBLEM = {"lshape": "plaplace", "square": "rof", "circle": "rof"}
DEFAULT_ALPHA = {"square": 100.0, "circle": 10.0}


class RunConfig(BaseModel):
    """Configuration of one SOLVE -> ESTIMATE -> MARK -> REFINE run"""
    problem: Literal["plaplace", "rof"]
    benchmark: Literal["lshape", "square", "circle"]
    sigma: Optional[float] = Field(default=None, gt=1)
    alpha: Optional[float] = Field(default=None, gt=0)
    refine_mode: Literal["uniform", "adaptive"] = "adaptive"
    theta: float = Field(default=0.5, gt=0, lt=1)
    estimator: Literal["pd", "res", "both"] = "pd"
    dual_space: Literal["C", "dC"] = "dC"
    max_dofs: int = Field(default=10_000, ge=1)
    out_dir: Optional[Path] = None

    initial_refinements: int = Field(default=2, ge=0)
    max_levels: int = Field(default=60, ge=1)
    rof_weight_gamma: Literal[0, 2] = 0
    solver: Literal["admm", "primal_dual"] = "admm"
    reference_energy: bool = False
    export_levels: bool = True

    @model_validator(mode="after")
    def check_problem_parameters(self) -> "RunConfig":
        if BENCHMARK_PROBLEM[self.benchmark] != self.problem:
            raise ValueError(f"benchmark '{self.benchmark}' belongs to problem '{BENCHMARK_PROBLEM[self.benchmark]}'")
        if self.problem == "plaplace":
            if self.sigma is None:
                raise ValueError("sigma is required for plaplace")
            if self.alpha is not None:
                raise ValueError("alpha is only used by rof")
            if self.solver != "admm":
                raise ValueError("the primal-dual iteration is only available for rof")
        else:
            if self.sigma is not None:
                raise ValueError("sigma is only used by plaplace")
            if self.alpha is None:
                self.alpha = DEFAULT_ALPHA[self.benchmark]
            if self.estimator != "pd":
                raise ValueError("rof only provides the primal-dual estimator")
        return self


class ConvergenceRecord(BaseModel):
    """Quantities recorded on one refinement level"""
    CSV_FIELDS: ClassVar[List[str]] = [
        "level", "ndof", "hbar", "E_primal", "D_dual", "eta_pd", "eta_res",
        "error", "osc", "iters_primal", "iters_dual",
        "eta_com", "p_norm", "ubar_error", "jump", "E_ref", "n_elements", "converged"
    ]

    level: int = Field(..., ge=0)
    ndof: int = Field(..., ge=1)
    hbar: float = Field(..., gt=0)
    E_primal: float
    D_dual: float
    eta_pd: float = Field(..., ge=0)
    eta_res: Optional[float] = None
    error: Optional[float] = None
    osc: float = 0.0
    iters_primal: int = 0
    iters_dual: int = 0

    eta_com: Optional[float] = None
    p_norm: Optional[float] = None
    ubar_error: Optional[float] = None
    jump: Optional[float] = None
    E_ref: Optional[float] = None
    n_elements: int = 0
    converged: bool = True

    def get(self, field: str) -> Optional[float]:
        return getattr(self, field)

    def csv_row(self) -> Dict[str, object]:
        return {name: getattr(self, name) for name in self.CSV_FIELDS}

"""
Base Problem Class
Common contract of the convex model problems solved in primal and dual form
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from pdafem.core.config import settings
from pdafem.fem.mesh import Triangulation
from pdafem.fem.spaces import FeFunction
from pdafem.schemas.solver import AdmmConfig
from pdafem.solvers.admm import AdmmState
from pdafem.utils.logger import logger


@dataclass(frozen=True)
class EstimatorReport:
    """Global estimator and per-element squared indicators"""
    indicators_sq: np.ndarray

    @property
    def total_sq(self) -> float:
        return float(self.indicators_sq.sum())

    @property
    def eta(self) -> float:
        return float(np.sqrt(max(self.total_sq, 0.0)))

    @property
    def indicators(self) -> np.ndarray:
        """eta_T, with round-off negatives clipped to zero"""
        return np.sqrt(np.maximum(self.indicators_sq, 0.0))

    @property
    def min_indicator_sq(self) -> float:
        return float(self.indicators_sq.min()) if self.indicators_sq.size else 0.0


@dataclass
class SolveResult:
    """Discrete solution with the solver state it came from"""
    solution: FeFunction
    iterations: int
    converged: bool
    state: Optional[AdmmState] = None


class ConvexProblem(ABC):
    """Base class for problems with a primal energy, a dual energy and a gap estimator"""

    problem_id: str = "convex"

    def __init__(self, mesh: Triangulation, name: str):
        self.mesh = mesh
        self.name = name

    @abstractmethod
    def energy_primal(self, u: FeFunction) -> float:
        """Discrete primal energy"""
        pass

    @abstractmethod
    def energy_dual(self, p: FeFunction) -> float:
        """Discrete dual energy (raises InfeasibleError off the constraint set)"""
        pass

    @abstractmethod
    def estimator(self, v: FeFunction, q: FeFunction) -> EstimatorReport:
        """Primal-dual gap estimator with per-element indicators"""
        pass

    @abstractmethod
    def solve_primal(self, config: AdmmConfig, initial: Optional[AdmmState] = None) -> SolveResult:
        pass

    @abstractmethod
    def solve_dual(self, config: AdmmConfig, initial: Optional[AdmmState] = None) -> SolveResult:
        pass

    @abstractmethod
    def on_mesh(self, mesh: Triangulation) -> "ConvexProblem":
        """Same problem data on another mesh"""
        pass

    @abstractmethod
    def oscillation(self) -> float:
        """Data oscillation reported next to the estimator"""
        pass

    def exact_error(self, u: FeFunction) -> Optional[float]:
        """Error against a known exact solution, None when there is none"""
        return None

    def primal_tolerance(self) -> float:
        return settings.TOL_FACTOR * self.mesh.hbar ** 2

    def dual_tolerance(self) -> float:
        return self.primal_tolerance()

    def gap(self, u: FeFunction, p: FeFunction) -> float:
        """E(u) - D(p), nonnegative up to round-off"""
        value = self.energy_primal(u) - self.energy_dual(p)
        if value < -1e-10:
            logger.warning(f"{self.name}: negative primal-dual gap {value:.3e}")
        return value

    def reference_problem(self, mesh: Triangulation) -> "ConvexProblem":
        """Problem on a refinement of ``self.mesh`` whose optimal energy bounds this level's dual energy"""
        return self.on_mesh(mesh)

    def data_arrays(self) -> Tuple[np.ndarray, ...]:
        """Discrete data identifying the problem in reference caches"""
        return ()

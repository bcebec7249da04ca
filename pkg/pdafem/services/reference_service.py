"""
Reference Service
Reference energies from fine uniform solves, cached on disk
"""
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ValidationError as PydanticValidationError

from pdafem.core.config import settings
from pdafem.fem.mesh import uniform_refine
from pdafem.problems.base import ConvexProblem
from pdafem.schemas.solver import AdmmConfig
from pdafem.utils.helpers import hash_arrays
from pdafem.utils.logger import logger


# reference meshes carry at least this many times the elements of the finest run
REFINEMENT_FACTOR = 16


class ReferenceEntry(BaseModel):
    """Cached reference energy"""
    key: str
    problem: str
    n_elements: int
    energy: float
    iterations: int
    converged: bool


class ReferenceService:
    """Service for fine-mesh reference energies"""

    def __init__(self, cache_dir: Optional[Path] = None):
        self.cache_dir = Path(cache_dir) if cache_dir is not None else Path(settings.REFERENCE_CACHE_DIR)

    def cache_key(self, problem: ConvexProblem, rounds: int) -> str:
        """Key built from the problem name, its mesh, its discrete data and the refinement depth"""
        mesh = problem.mesh
        return hash_arrays(
            problem.problem_id, problem.name, mesh.nodes, mesh.elements, mesh.boundary_labels,
            *problem.data_arrays(), rounds
        )

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def load(self, key: str) -> Optional[ReferenceEntry]:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return ReferenceEntry.model_validate_json(path.read_text())
        except (OSError, PydanticValidationError) as e:
            logger.warning(f"Ignoring unreadable reference cache {path}: {e}")
            return None

    def store(self, entry: ReferenceEntry):
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            self._path(entry.key).write_text(entry.model_dump_json())
        except OSError as e:
            logger.warning(f"Could not cache reference energy in {self.cache_dir}: {e}")

    def reference_energy(self, problem: ConvexProblem, target_elements: int) -> float:
        """
        Discrete primal energy on a uniform refinement of ``problem.mesh``
        with at least ``REFINEMENT_FACTOR * target_elements`` elements, the
        data carried over by ``problem.reference_problem``.

        Args:
            problem: Problem whose discrete data the reference keeps
            target_elements: Element count the reference has to exceed by the refinement factor

        Returns:
            Reference energy
        """
        rounds = 0
        n_elements = problem.mesh.n_elements
        while n_elements < REFINEMENT_FACTOR * target_elements:
            n_elements *= 2
            rounds += 1

        key = self.cache_key(problem, rounds)
        cached = self.load(key)
        if cached is not None:
            logger.info(f"Reference energy {cached.energy:.12g} for {problem.name} from cache")
            return cached.energy

        fine = problem
        for _ in range(rounds):
            fine = fine.reference_problem(uniform_refine(fine.mesh))
        logger.info(f"Computing reference energy for {problem.name} on {fine.mesh.n_elements} elements")
        result = fine.solve_primal(AdmmConfig(tol=fine.primal_tolerance()))
        energy = fine.energy_primal(result.solution)
        if not result.converged:
            logger.warning(f"Reference solve for {problem.name} did not converge")

        self.store(ReferenceEntry(
            key=key,
            problem=problem.name,
            n_elements=fine.mesh.n_elements,
            energy=energy,
            iterations=result.iterations,
            converged=result.converged
        ))
        return energy


# Create global reference service instance
reference_service = ReferenceService()

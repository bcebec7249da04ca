"""
Problem Registry
Builds model problems from run configurations
"""
from typing import Callable, Dict, List

from pdafem.core.exceptions import ConfigError
from pdafem.fem.mesh import Triangulation, uniform_refine
from pdafem.problems.base import ConvexProblem
from pdafem.problems.benchmarks import LShapeBenchmark, RofBenchmark
from pdafem.problems.plaplace import PLaplaceProblem
from pdafem.problems.rof import RofProblem
from pdafem.schemas.run import RunConfig
from pdafem.utils.logger import logger


ProblemFactory = Callable[[RunConfig, Triangulation], ConvexProblem]


def _lshape(config: RunConfig, mesh: Triangulation) -> ConvexProblem:
    return PLaplaceProblem.from_benchmark(LShapeBenchmark(config.sigma), mesh)


def _rof(kind: str) -> ProblemFactory:
    def factory(config: RunConfig, mesh: Triangulation) -> ConvexProblem:
        return RofProblem.from_benchmark(
            RofBenchmark(kind),
            mesh,
            dual_space=config.dual_space,
            gamma=config.rof_weight_gamma,
            alpha=config.alpha
        )
    return factory


class ProblemRegistry:
    """Central registry of benchmark problem factories"""

    def __init__(self):
        self.factories: Dict[str, ProblemFactory] = {}
        self.meshes: Dict[str, Callable[[], Triangulation]] = {}

    def register(self, benchmark: str, factory: ProblemFactory, mesh: Callable[[], Triangulation]):
        """Register a benchmark with its problem factory and coarse mesh"""
        self.factories[benchmark] = factory
        self.meshes[benchmark] = mesh
        logger.debug(f"Registered benchmark: {benchmark}")

    def get_benchmarks(self) -> List[str]:
        return sorted(self.factories)

    def initial_mesh(self, config: RunConfig) -> Triangulation:
        """Coarse benchmark mesh after the configured uniform pre-refinements"""
        if config.benchmark not in self.meshes:
            raise ConfigError(f"Unknown benchmark '{config.benchmark}'")
        return uniform_refine(self.meshes[config.benchmark](), config.initial_refinements)

    def create(self, config: RunConfig, mesh: Triangulation) -> ConvexProblem:
        """Problem of the configured benchmark on ``mesh``"""
        factory = self.factories.get(config.benchmark)
        if factory is None:
            raise ConfigError(f"Unknown benchmark '{config.benchmark}'")
        return factory(config, mesh)


# Create global registry instance
problem_registry = ProblemRegistry()
problem_registry.register("lshape", _lshape, lambda: LShapeBenchmark(2.0).mesh())
problem_registry.register("square", _rof("square"), RofBenchmark("square").mesh)
problem_registry.register("circle", _rof("circle"), RofBenchmark("circle").mesh)

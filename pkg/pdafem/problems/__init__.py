"""
Problems package
Convex model problems and their benchmarks
"""
from pdafem.problems.base import ConvexProblem, EstimatorReport, SolveResult
from pdafem.problems.benchmarks import LShapeBenchmark, RofBenchmark
from pdafem.problems.plaplace import PLaplaceProblem
from pdafem.problems.rof import RofProblem

__all__ = [
    "ConvexProblem",
    "EstimatorReport",
    "SolveResult",
    "LShapeBenchmark",
    "RofBenchmark",
    "PLaplaceProblem",
    "RofProblem",
]

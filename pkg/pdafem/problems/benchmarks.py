"""
Benchmarks
Data and exact solutions of the L-shape, square and circle examples
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from pdafem.core.exceptions import ValidationError
from pdafem.fem.mesh import DIRICHLET, NEUMANN, Domain, Triangulation, initial_mesh, with_boundary_labels


def polar(points: np.ndarray):
    """Radius and angle in [0, 2 pi)"""
    x, y = points[..., 0], points[..., 1]
    return np.hypot(x, y), np.mod(np.arctan2(y, x), 2.0 * np.pi)


@dataclass(frozen=True)
class LShapeBenchmark:
    """
    Singular p-Laplace solution u = r^delta sin(delta theta) on the L-shape.

    delta = (6/5)(1 - 1/sigma) lies in (0, 1) for sigma in (1, 6).
    """
    sigma: float

    def __post_init__(self):
        if not 1.0 < self.sigma < 6.0:
            raise ValidationError(f"L-shape benchmark needs sigma in (1, 6), got {self.sigma}")

    @property
    def delta(self) -> float:
        return 1.2 * (1.0 - 1.0 / self.sigma)

    def mesh(self) -> Triangulation:
        return initial_mesh(Domain.LSHAPE)

    def exact_u(self, points: np.ndarray) -> np.ndarray:
        r, theta = polar(points)
        return r ** self.delta * np.sin(self.delta * theta)

    def exact_gradient(self, points: np.ndarray) -> np.ndarray:
        r, theta = polar(points)
        d = self.delta
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, d * r ** (d - 1.0), 0.0)
        return np.stack([scale * np.sin((d - 1.0) * theta), scale * np.cos((d - 1.0) * theta)], axis=-1)

    def source(self, points: np.ndarray) -> np.ndarray:
        """f = -div(|grad u|^(sigma-2) grad u), singular at the origin"""
        r, theta = polar(points)
        d, s = self.delta, self.sigma
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(r > 0, r ** ((d - 1.0) * (s - 1.0) - 1.0), 0.0)
        return -(2.0 - s) * d ** (s - 1.0) * (1.0 - d) * radial * np.sin(d * theta)

    def level_set(self, points: np.ndarray) -> np.ndarray:
        """Distance to the singular point"""
        return np.hypot(points[..., 0], points[..., 1])


@dataclass(frozen=True)
class RofBenchmark:
    """Characteristic-function data on (-1,1)^2"""
    kind: str

    def __post_init__(self):
        if self.kind not in ("square", "circle"):
            raise ValidationError(f"Unknown ROF benchmark '{self.kind}'")

    @property
    def alpha(self) -> float:
        return 100.0 if self.kind == "square" else 10.0

    @property
    def boundary_label(self) -> str:
        return NEUMANN if self.kind == "square" else DIRICHLET

    @property
    def has_exact_solution(self) -> bool:
        return self.kind == "circle"

    @property
    def exact_energy(self) -> Optional[float]:
        """Optimal energy 4 pi/5 of the circle example (alpha = 10)"""
        return 0.8 * np.pi if self.kind == "circle" else None

    def mesh(self) -> Triangulation:
        return with_boundary_labels(initial_mesh(Domain.UNIT_SQUARE_SYM), self.boundary_label)

    def level_set(self, points: np.ndarray) -> np.ndarray:
        """1-Lipschitz function vanishing on the jump set of g"""
        if self.kind == "square":
            return np.maximum(np.abs(points[..., 0]), np.abs(points[..., 1])) - 0.5
        return np.hypot(points[..., 0], points[..., 1]) - 0.5

    def g(self, points: np.ndarray) -> np.ndarray:
        return (self.level_set(points) < 0).astype(np.float64)

    def exact_u(self, points: np.ndarray) -> np.ndarray:
        if self.kind != "circle":
            raise ValidationError("The square benchmark has no exact solution")
        return 0.6 * self.g(points)

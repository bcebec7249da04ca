"""
Quadrature
Composite degree-5 rules on triangles with local subdivision
"""
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np

from pdafem.core.config import settings
from pdafem.fem.mesh import Triangulation
from pdafem.utils.helpers import chunk_ranges


# integrand(points (M, Q, 2), barycentric (Q, 3), element indices (M,)) -> values (M, Q, ...)
Integrand = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

CHUNK_SIZE = 4096


def _seven_point_rule() -> Tuple[np.ndarray, np.ndarray]:
    s = np.sqrt(15.0)
    a, b = (6.0 - s) / 21.0, (9.0 + 2.0 * s) / 21.0
    c, d = (6.0 + s) / 21.0, (9.0 - 2.0 * s) / 21.0
    bary = np.array([
        [1 / 3, 1 / 3, 1 / 3],
        [a, a, b], [a, b, a], [b, a, a],
        [c, c, d], [c, d, c], [d, c, c],
    ])
    w1 = (155.0 - s) / 1200.0
    w2 = (155.0 + s) / 1200.0
    weights = np.array([0.225, w1, w1, w1, w2, w2, w2])
    return bary, weights


def _red_subdivision(levels: int) -> np.ndarray:
    """Barycentric vertices of the 4**levels congruent sub-triangles, shape (S, 3, 3)"""
    triangles = np.eye(3)[None]
    for _ in range(levels):
        v0, v1, v2 = triangles[:, 0], triangles[:, 1], triangles[:, 2]
        m01, m12, m20 = 0.5 * (v0 + v1), 0.5 * (v1 + v2), 0.5 * (v2 + v0)
        triangles = np.concatenate([
            np.stack([v0, m01, m20], axis=1),
            np.stack([m01, v1, m12], axis=1),
            np.stack([m20, m12, v2], axis=1),
            np.stack([m12, m20, m01], axis=1),
        ])
    return triangles


@lru_cache(maxsize=None)
def composite_rule(levels: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Seven-point rule of degree 5 applied on every sub-triangle of a red subdivision.

    Args:
        levels: Subdivision depth (4**levels sub-triangles)

    Returns:
        Barycentric points (Q, 3) and weights (Q,) summing to one
    """
    bary, weights = _seven_point_rule()
    sub = _red_subdivision(levels)
    points = np.einsum("qi,sij->sqj", bary, sub).reshape(-1, 3)
    all_weights = np.tile(weights, len(sub)) / len(sub)
    points.setflags(write=False)
    all_weights.setflags(write=False)
    return points, all_weights


def _integrate_block(
    mesh: Triangulation,
    integrand: Integrand,
    elements: np.ndarray,
    levels: int
) -> np.ndarray:
    bary, weights = composite_rule(levels)
    coords = mesh.vertex_coordinates[elements]
    points = np.einsum("qi,mij->mqj", bary, coords)
    values = np.asarray(integrand(points, bary, elements), dtype=np.float64)
    integrals = np.einsum("mq...,q->m...", values, weights)
    return mesh.areas[elements].reshape((-1,) + (1,) * (integrals.ndim - 1)) * integrals


def element_integrals(
    mesh: Triangulation,
    integrand: Integrand,
    levels: Union[int, np.ndarray] = 0
) -> np.ndarray:
    """
    Per-element integrals of a (vectorized) integrand.

    Args:
        mesh: Triangulation
        integrand: Callable evaluated on batches of quadrature points
        levels: Subdivision depth, scalar or per element

    Returns:
        Array of shape (m,) (or (m, ...) for vector-valued integrands)
    """
    level_array = np.broadcast_to(np.asarray(levels, dtype=np.int64), (mesh.n_elements,))
    tasks = []
    for level in np.unique(level_array):
        members = np.flatnonzero(level_array == level)
        for start, stop in chunk_ranges(len(members), CHUNK_SIZE):
            tasks.append((int(level), members[start:stop]))

    def run(task):
        level, members = task
        return members, _integrate_block(mesh, integrand, members, level)

    if settings.AFEM_THREADS > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=settings.AFEM_THREADS) as executor:
            results = list(executor.map(run, tasks))
    else:
        results = [run(task) for task in tasks]

    out: Optional[np.ndarray] = None
    for members, values in results:
        if out is None:
            out = np.zeros((mesh.n_elements,) + values.shape[1:])
        out[members] = values
    return out if out is not None else np.zeros(0)


def interface_elements(mesh: Triangulation, level_set: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """
    Elements that may be cut by the zero set of a 1-Lipschitz level-set function.

    An element whose centroid is farther than h_T from the zero set cannot be cut.
    """
    centroids = mesh.vertex_coordinates.mean(axis=1)
    return np.abs(level_set(centroids)) <= mesh.diameters


def point_elements(mesh: Triangulation, point: Tuple[float, float], tol: float = 1e-12) -> np.ndarray:
    """Elements having a vertex at ``point``"""
    dist = np.linalg.norm(mesh.vertex_coordinates - np.asarray(point), axis=2)
    return (dist <= tol).any(axis=1)


def refinement_levels(mask: np.ndarray, refined: int, base: int = 0) -> np.ndarray:
    """Per-element subdivision depth: ``refined`` where mask holds, ``base`` elsewhere"""
    return np.where(mask, refined, base).astype(np.int64)


def l2_norm(
    mesh: Triangulation,
    integrand: Integrand,
    levels: Union[int, np.ndarray] = 0
) -> float:
    """Square root of the integral of a nonnegative integrand (e.g. |u - u_h|^2)"""
    return float(np.sqrt(max(element_integrals(mesh, integrand, levels).sum(), 0.0)))

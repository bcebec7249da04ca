"""
Triangulations
Conforming 2-D simplicial meshes, newest-vertex bisection and Doerfler marking
"""
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Optional, Tuple, Union

import numpy as np

from pdafem.core.exceptions import MeshError, ValidationError, ExportError
from pdafem.utils.helpers import as_index_array, format_float
from pdafem.utils.logger import logger


DIRICHLET = "D"
NEUMANN = "N"
INTERIOR = "I"

# local edge j is opposite local vertex j
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]], dtype=np.int64)


class Domain(str, Enum):
    """Coarse domains of the benchmarks"""
    UNIT_SQUARE_SYM = "unit_square_sym"
    LSHAPE = "lshape"


@dataclass(frozen=True, eq=False)
class Triangulation:
    """
    Conforming triangulation with labelled boundary sides.

    Elements are counterclockwise; local vertex 0 is opposite the refinement edge.
    Instances are immutable, derived connectivity is computed lazily.
    """
    nodes: np.ndarray
    elements: np.ndarray
    boundary: np.ndarray
    boundary_labels: np.ndarray
    generation: Optional[np.ndarray] = None
    node_parents: Optional[np.ndarray] = None
    element_parents: Optional[np.ndarray] = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64).reshape(-1, 2)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64).reshape(-1, 3)
        boundary = np.ascontiguousarray(self.boundary, dtype=np.int64).reshape(-1, 2)
        labels = np.asarray(self.boundary_labels, dtype="<U1").reshape(-1)
        generation = (
            np.zeros(len(elements), dtype=np.int64) if self.generation is None
            else np.asarray(self.generation, dtype=np.int64).reshape(-1)
        )

        if len(labels) != len(boundary):
            raise MeshError("Boundary labels and boundary sides differ in length")
        if len(generation) != len(elements):
            raise MeshError("Generation array does not match the element count")
        if not np.isin(labels, [DIRICHLET, NEUMANN]).all():
            raise MeshError("Boundary labels must be 'D' or 'N'")
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            raise MeshError("Element references a node that does not exist")

        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        object.__setattr__(self, "boundary", boundary)
        object.__setattr__(self, "boundary_labels", labels)
        object.__setattr__(self, "generation", generation)

        if elements.size and (self.signed_areas <= 0).any():
            worst = int(np.argmin(self.signed_areas))
            raise MeshError(f"Element {worst} has nonpositive signed area")

    def __repr__(self):
        return f"Triangulation(nodes={self.n_nodes}, elements={self.n_elements}, boundary={len(self.boundary)})"

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def vertex_coordinates(self) -> np.ndarray:
        """Coordinates of the element vertices, shape (m, 3, 2)"""
        return self.nodes[self.elements]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        x = self.vertex_coordinates
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def grad_barycentric(self) -> np.ndarray:
        """Gradients of the barycentric coordinates, shape (m, 3, 2)"""
        x = self.vertex_coordinates
        nxt = x[:, [1, 2, 0]]
        prv = x[:, [2, 0, 1]]
        grads = np.empty_like(x)
        grads[..., 0] = nxt[..., 1] - prv[..., 1]
        grads[..., 1] = prv[..., 0] - nxt[..., 0]
        return grads / (2.0 * self.signed_areas)[:, None, None]

    @cached_property
    def _edge_data(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.n_nodes
        pairs = self.elements[:, LOCAL_EDGES]
        lo = pairs.min(axis=2).reshape(-1)
        hi = pairs.max(axis=2).reshape(-1)
        keys, inverse = np.unique(lo * n + hi, return_inverse=True)
        edges = np.stack([keys // n, keys % n], axis=1)
        return keys, edges, inverse.reshape(-1, 3)

    @property
    def edges(self) -> np.ndarray:
        """Sides as sorted node pairs, shape (E, 2)"""
        return self._edge_data[1]

    @property
    def element_edges(self) -> np.ndarray:
        """Side index of local edge j (opposite vertex j), shape (m, 3)"""
        return self._edge_data[2]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _edge_adjacency(self) -> Tuple[np.ndarray, np.ndarray]:
        inverse = self.element_edges.reshape(-1)
        counts = np.bincount(inverse, minlength=self.n_edges)
        if (counts > 2).any():
            raise MeshError("A side is shared by more than two elements")
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        owners = np.full((self.n_edges, 2), -1, dtype=np.int64)
        local = np.full((self.n_edges, 2), -1, dtype=np.int64)
        owners[:, 0] = order[starts] // 3
        local[:, 0] = order[starts] % 3
        two = counts == 2
        owners[two, 1] = order[starts[two] + 1] // 3
        local[two, 1] = order[starts[two] + 1] % 3
        return owners, local

    @property
    def edge_elements(self) -> np.ndarray:
        """Elements adjacent to each side (second entry -1 on the boundary)"""
        return self._edge_adjacency[0]

    @property
    def edge_local_index(self) -> np.ndarray:
        """Local edge index of each side inside its adjacent elements"""
        return self._edge_adjacency[1]

    @cached_property
    def boundary_edge_index(self) -> np.ndarray:
        """Side index of every boundary side"""
        keys = self._edge_data[0]
        lo = self.boundary.min(axis=1)
        hi = self.boundary.max(axis=1)
        wanted = lo * self.n_nodes + hi
        pos = np.searchsorted(keys, wanted)
        pos = np.clip(pos, 0, len(keys) - 1)
        if len(wanted) and not np.array_equal(keys[pos], wanted):
            raise MeshError("Boundary side is not a side of the triangulation")
        return pos

    @cached_property
    def edge_labels(self) -> np.ndarray:
        """'I' for interior sides, otherwise the boundary label"""
        labels = np.full(self.n_edges, INTERIOR, dtype="<U1")
        labels[self.boundary_edge_index] = self.boundary_labels
        return labels

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        e = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return np.hypot(e[:, 0], e[:, 1])

    @cached_property
    def diameters(self) -> np.ndarray:
        """h_T, the longest edge of each element"""
        return self.edge_lengths[self.element_edges].max(axis=1)

    @property
    def hbar(self) -> float:
        return float(self.n_nodes) ** -0.5

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        return np.unique(self.boundary[self.boundary_labels == DIRICHLET])

    @cached_property
    def node_patch_areas(self) -> np.ndarray:
        """Sum of |T|/3 over the elements containing each node"""
        return np.bincount(
            self.elements.reshape(-1),
            weights=np.repeat(self.areas / 3.0, 3),
            minlength=self.n_nodes
        )

    def check_conformity(self) -> bool:
        """True when every side has one or two neighbours and the open sides are exactly the boundary"""
        try:
            owners = self.edge_elements
            boundary_sides = self.boundary_edge_index
        except MeshError:
            return False
        open_sides = np.flatnonzero(owners[:, 1] < 0)
        return (
            len(np.unique(boundary_sides)) == len(boundary_sides)
            and np.array_equal(np.sort(boundary_sides), open_sides)
        )


@dataclass(frozen=True)
class MarkedSet:
    """Elements selected for refinement"""
    indices: np.ndarray
    converged: bool = False

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, index: int) -> bool:
        return bool(np.isin(index, self.indices))

    def to_set(self) -> set:
        return set(int(i) for i in self.indices)


def initial_mesh(domain: Union[Domain, str]) -> Triangulation:
    """
    Coarse mesh of (-1,1)^2 or of the L-shape (-1,1)^2 minus [0,1]x[-1,0].

    All boundary sides start as Dirichlet; problems relabel them.
    """
    domain = Domain(domain)
    if domain == Domain.UNIT_SQUARE_SYM:
        nodes = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        # the diagonal (0,2) is the refinement edge of both triangles
        elements = [(1, 2, 0), (3, 0, 2)]
        boundary = [(0, 1), (1, 2), (2, 3), (3, 0)]
    else:
        nodes = [
            (0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0),
            (-1.0, 1.0), (-1.0, 0.0), (-1.0, -1.0), (0.0, -1.0)
        ]
        # six right triangles around the reentrant corner, paired across the diagonals
        elements = [(1, 2, 0), (3, 0, 2), (3, 4, 0), (5, 0, 4), (5, 6, 0), (7, 0, 6)]
        boundary = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 0)]
    return Triangulation(
        nodes=np.array(nodes),
        elements=np.array(elements),
        boundary=np.array(boundary),
        boundary_labels=np.full(len(boundary), DIRICHLET)
    )


def with_boundary_labels(
    mesh: Triangulation,
    label: Union[str, Callable[[np.ndarray], np.ndarray]]
) -> Triangulation:
    """
    Relabel the boundary sides.

    Args:
        mesh: Triangulation
        label: 'D', 'N', or a callable mapping side midpoints (k, 2) to labels

    Returns:
        Triangulation sharing nodes and elements with ``mesh``
    """
    if callable(label):
        midpoints = 0.5 * (mesh.nodes[mesh.boundary[:, 0]] + mesh.nodes[mesh.boundary[:, 1]])
        labels = np.asarray(label(midpoints), dtype="<U1")
    else:
        labels = np.full(len(mesh.boundary), label, dtype="<U1")
    return Triangulation(
        nodes=mesh.nodes,
        elements=mesh.elements,
        boundary=mesh.boundary,
        boundary_labels=labels,
        generation=mesh.generation,
        node_parents=mesh.node_parents,
        element_parents=mesh.element_parents
    )


def refine(mesh: Triangulation, marked: Union[MarkedSet, Iterable[int]]) -> Triangulation:
    """
    Newest-vertex bisection of the marked elements plus conformity closure.

    Every marked element is bisected at least once; an element that has any
    side bisected also gets its refinement edge bisected, so the result has
    no hanging nodes. New nodes are edge midpoints appended after the old ones.
    """
    indices = as_index_array(marked.indices if isinstance(marked, MarkedSet) else marked)
    if indices.size and (indices[0] < 0 or indices[-1] >= mesh.n_elements):
        raise ValidationError("Marked element index out of range")
    if indices.size == 0:
        return mesh

    el = mesh.elements
    el2e = mesh.element_edges

    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[el2e[indices, 0]] = True
    while True:
        pending = edge_marked[el2e].any(axis=1) & ~edge_marked[el2e[:, 0]]
        if not pending.any():
            break
        edge_marked[el2e[pending, 0]] = True

    split_edges = np.flatnonzero(edge_marked)
    midpoint_id = np.full(mesh.n_edges, -1, dtype=np.int64)
    midpoint_id[split_edges] = mesh.n_nodes + np.arange(len(split_edges))
    parents = mesh.edges[split_edges]
    nodes = np.vstack([mesh.nodes, 0.5 * (mesh.nodes[parents[:, 0]] + mesh.nodes[parents[:, 1]])])

    mid = midpoint_id[el2e]
    v0, v1, v2 = el[:, 0], el[:, 1], el[:, 2]
    m0, m1, m2 = mid[:, 0], mid[:, 1], mid[:, 2]
    bisect = m0 >= 0
    split_a = bisect & (m1 >= 0)
    split_b = bisect & (m2 >= 0)

    def rows(*cols):
        return np.stack(cols, axis=1)

    # four child slots per parent, filled in parent order
    slots = np.empty((mesh.n_elements, 4, 3), dtype=np.int64)
    slots[:, 0] = np.where(
        bisect[:, None],
        np.where(split_a[:, None], rows(m1, v0, m0), rows(m0, v2, v0)),
        el
    )
    slots[:, 1] = rows(m1, m0, v2)
    slots[:, 2] = np.where(split_b[:, None], rows(m2, v1, m0), rows(m0, v0, v1))
    slots[:, 3] = rows(m2, m0, v0)
    valid = np.stack([np.ones(mesh.n_elements, dtype=bool), split_a, bisect, split_b], axis=1)

    gen = mesh.generation
    child_gen = np.stack([
        gen + np.where(bisect, 1 + split_a, 0),
        gen + 2,
        gen + 1 + split_b,
        gen + 2
    ], axis=1)
    parent_of = np.repeat(np.arange(mesh.n_elements), 4).reshape(-1, 4)

    # boundary sides split at their midpoints
    bmid = midpoint_id[mesh.boundary_edge_index]
    bsplit = bmid >= 0
    bslots = np.empty((len(mesh.boundary), 2, 2), dtype=np.int64)
    bslots[:, 0] = np.where(bsplit[:, None], rows(mesh.boundary[:, 0], bmid), mesh.boundary)
    bslots[:, 1] = rows(bmid, mesh.boundary[:, 1])
    bvalid = np.stack([np.ones(len(mesh.boundary), dtype=bool), bsplit], axis=1)

    refined = Triangulation(
        nodes=nodes,
        elements=slots[valid],
        boundary=bslots[bvalid],
        boundary_labels=np.repeat(mesh.boundary_labels, 2).reshape(-1, 2)[bvalid],
        generation=child_gen[valid],
        node_parents=parents,
        element_parents=parent_of[valid]
    )
    logger.debug(
        f"Refined {len(indices)} marked of {mesh.n_elements} elements -> "
        f"{refined.n_elements} elements, {refined.n_nodes} nodes"
    )
    return refined


def uniform_refine(mesh: Triangulation, times: int = 1) -> Triangulation:
    """Bisect every element ``times`` times"""
    for _ in range(times):
        mesh = refine(mesh, np.arange(mesh.n_elements))
    return mesh


def dorfler_mark(indicators: np.ndarray, theta: float) -> MarkedSet:
    """
    Minimal set M with sum_M eta_T^2 >= theta^2 sum_T eta_T^2.

    Args:
        indicators: Nonnegative per-element indicators eta_T (not squared)
        theta: Bulk parameter in (0, 1)

    Returns:
        MarkedSet; empty and flagged converged when all indicators vanish
    """
    eta = np.asarray(indicators, dtype=np.float64).reshape(-1)
    if not 0.0 < theta < 1.0:
        raise ValidationError(f"theta must lie in (0,1), got {theta}")
    if (eta < 0).any() or not np.isfinite(eta).all():
        raise ValidationError("Indicators must be finite and nonnegative")

    squared = eta ** 2
    total = squared.sum()
    if total == 0.0:
        return MarkedSet(indices=np.empty(0, dtype=np.int64), converged=True)

    # descending indicators, ties by ascending element index
    order = np.lexsort((np.arange(len(eta)), -squared))
    cumulative = np.cumsum(squared[order])
    reached = cumulative >= theta ** 2 * total
    count = int(np.argmax(reached)) + 1 if reached.any() else len(eta)
    return MarkedSet(indices=np.sort(order[:count]))


def mesh_sizes(mesh: Triangulation) -> Tuple[np.ndarray, float]:
    """Per-element diameters h_T and the average mesh size |N_h|^(-1/2)"""
    return mesh.diameters.copy(), mesh.hbar


def write_mesh(mesh: Triangulation, path: Union[str, Path]) -> Path:
    """Write the ASCII mesh format (17 significant digits)"""
    path = Path(path)
    lines = [f"nodes {mesh.n_nodes}"]
    lines += [f"{format_float(x)} {format_float(y)}" for x, y in mesh.nodes]
    lines.append(f"elements {mesh.n_elements}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.elements]
    lines.append(f"boundary {len(mesh.boundary)}")
    lines += [f"{i} {j} {lab}" for (i, j), lab in zip(mesh.boundary, mesh.boundary_labels)]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as e:
        raise ExportError(f"Cannot write mesh ({e})", path=str(path))
    return path


def read_mesh(path: Union[str, Path]) -> Triangulation:
    """Read the ASCII mesh format written by ``write_mesh``"""
    path = Path(path)
    try:
        tokens = [line.split() for line in path.read_text().splitlines() if line.strip()]
    except OSError as e:
        raise MeshError(f"Cannot read mesh file {path}: {e}")

    def section(pos: int, name: str) -> Tuple[int, int]:
        if pos >= len(tokens) or tokens[pos][0] != name:
            raise MeshError(f"{path}: expected section '{name}'")
        return int(tokens[pos][1]), pos + 1

    try:
        count, pos = section(0, "nodes")
        nodes = np.array([[float(t) for t in row] for row in tokens[pos:pos + count]]).reshape(-1, 2)
        count, pos = section(pos + count, "elements")
        elements = np.array([[int(t) for t in row] for row in tokens[pos:pos + count]]).reshape(-1, 3)
        count, pos = section(pos + count, "boundary")
        rows = tokens[pos:pos + count]
        boundary = np.array([[int(r[0]), int(r[1])] for r in rows]).reshape(-1, 2)
        labels = np.array([r[2] for r in rows], dtype="<U1")
    except (ValueError, IndexError) as e:
        raise MeshError(f"{path}: malformed mesh file ({e})")
    return Triangulation(nodes=nodes, elements=elements, boundary=boundary, boundary_labels=labels)

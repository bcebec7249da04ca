"""
Finite Element Spaces
P1, P0, discontinuous P1 and the hybrid BDM space; products, lifts and assembly
"""
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from pdafem.core.exceptions import SolverError, SpaceMismatchError, ValidationError
from pdafem.fem.mesh import DIRICHLET, INTERIOR, NEUMANN, Triangulation
from pdafem.fem.quadrature import element_integrals


class SpaceKind(str, Enum):
    """Supported finite element spaces"""
    P1 = "P1_scalar"
    P0 = "P0_scalar"
    P0_VECTOR = "P0_vector"
    P1DISC = "P1disc_scalar"
    P1DISC_VECTOR = "P1disc_vector"
    BDM = "BDM"


# coefficient layout per kind: ("node" | "element" | "vertex", components)
_LAYOUT = {
    SpaceKind.P1: ("node", 1),
    SpaceKind.P0: ("element", 1),
    SpaceKind.P0_VECTOR: ("element", 2),
    SpaceKind.P1DISC: ("vertex", 1),
    SpaceKind.P1DISC_VECTOR: ("vertex", 2),
    SpaceKind.BDM: ("vertex", 2),
}


@dataclass(frozen=True, eq=False)
class SpaceDescriptor:
    """A finite element space on a given mesh"""
    kind: SpaceKind
    mesh: Triangulation
    dirichlet_constrained: bool = False
    neumann_constrained: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", SpaceKind(self.kind))
        if self.dirichlet_constrained and self.kind != SpaceKind.P1:
            raise ValidationError("Only P1 spaces carry Dirichlet constraints")
        if self.neumann_constrained and self.kind != SpaceKind.BDM:
            raise ValidationError("Only BDM spaces carry Neumann constraints")

    def __eq__(self, other):
        return (
            isinstance(other, SpaceDescriptor)
            and self.kind == other.kind
            and self.mesh is other.mesh
            and self.dirichlet_constrained == other.dirichlet_constrained
            and self.neumann_constrained == other.neumann_constrained
        )

    def __hash__(self):
        return hash((self.kind, id(self.mesh)))

    @property
    def shape(self) -> Tuple[int, ...]:
        where, components = _LAYOUT[self.kind]
        if where == "node":
            return (self.mesh.n_nodes,)
        if where == "element":
            return (self.mesh.n_elements,) if components == 1 else (self.mesh.n_elements, 2)
        return (self.mesh.n_elements, 3) if components == 1 else (self.mesh.n_elements, 3, 2)

    @property
    def ndof(self) -> int:
        return int(np.prod(self.shape))

    @property
    def is_vector(self) -> bool:
        return _LAYOUT[self.kind][1] == 2

    @property
    def is_discontinuous_affine(self) -> bool:
        return _LAYOUT[self.kind][0] == "vertex"


@dataclass(frozen=True, eq=False)
class FeFunction:
    """Coefficient vector bound to a space"""
    space: SpaceDescriptor
    coefficients: np.ndarray

    def __post_init__(self):
        coefficients = np.array(self.coefficients, dtype=np.float64).reshape(-1)
        if coefficients.size != self.space.ndof:
            raise ValidationError(
                f"{self.space.kind.value} expects {self.space.ndof} coefficients, got {coefficients.size}"
            )
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)

    @classmethod
    def zeros(cls, space: SpaceDescriptor) -> "FeFunction":
        return cls(space, np.zeros(space.ndof))

    @classmethod
    def from_values(cls, space: SpaceDescriptor, values: np.ndarray) -> "FeFunction":
        return cls(space, np.asarray(values, dtype=np.float64).reshape(-1))

    @property
    def mesh(self) -> Triangulation:
        return self.space.mesh

    @property
    def kind(self) -> SpaceKind:
        return self.space.kind

    @property
    def values(self) -> np.ndarray:
        """Coefficients reshaped to the natural layout of the space"""
        return self.coefficients.reshape(self.space.shape)

    def with_values(self, values: np.ndarray) -> "FeFunction":
        return FeFunction.from_values(self.space, values)


def space(
    mesh: Triangulation,
    kind: Union[SpaceKind, str],
    dirichlet_constrained: bool = False,
    neumann_constrained: bool = False
) -> SpaceDescriptor:
    return SpaceDescriptor(SpaceKind(kind), mesh, dirichlet_constrained, neumann_constrained)


def _require(fn: FeFunction, *kinds: SpaceKind):
    if fn.kind not in kinds:
        allowed = ", ".join(k.value for k in kinds)
        raise SpaceMismatchError(f"Expected a function in {{{allowed}}}, got {fn.kind.value}")


def _same_mesh(a: FeFunction, b: FeFunction):
    if a.mesh is not b.mesh:
        raise SpaceMismatchError("Functions live on different meshes")


def vertex_values(fn: FeFunction) -> np.ndarray:
    """Values at the element vertices, shape (m, 3) or (m, 3, 2)"""
    mesh = fn.mesh
    where, components = _LAYOUT[fn.kind]
    if where == "vertex":
        return fn.values
    if where == "node":
        return fn.values[mesh.elements]
    if components == 1:
        return np.repeat(fn.values[:, None], 3, axis=1)
    return np.repeat(fn.values[:, None, :], 3, axis=1)


def evaluate(fn: FeFunction, bary: np.ndarray) -> np.ndarray:
    """Values at barycentric points of every element, shape (m, Q) or (m, Q, 2)"""
    vals = vertex_values(fn)
    if vals.ndim == 2:
        return vals @ np.asarray(bary).T
    return np.einsum("qj,mjc->mqc", np.asarray(bary), vals)


# --------------------------------------------------------------------------- operators

def gradient_p1(u: FeFunction) -> FeFunction:
    """Elementwise constant gradient of a P1 function"""
    _require(u, SpaceKind.P1)
    mesh = u.mesh
    grads = np.einsum("mjc,mj->mc", mesh.grad_barycentric, u.values[mesh.elements])
    return FeFunction.from_values(space(mesh, SpaceKind.P0_VECTOR), grads)


def divergence_bdm(p: FeFunction) -> FeFunction:
    """Elementwise constant divergence of an elementwise affine vector field"""
    _require(p, SpaceKind.P1DISC_VECTOR, SpaceKind.BDM)
    mesh = p.mesh
    div = np.einsum("mjc,mjc->m", mesh.grad_barycentric, p.values)
    return FeFunction.from_values(space(mesh, SpaceKind.P0), div)


def element_weights(mesh: Triangulation, alpha: float) -> np.ndarray:
    """h_T^(d(2/alpha - 1)) with d = 2"""
    return mesh.diameters ** (2.0 * (2.0 / alpha - 1.0))


def lumped_inner(v: FeFunction, w: FeFunction, weights: Optional[np.ndarray] = None) -> float:
    """
    Mass-lumped product (v, w)_h = sum_T |T|/3 sum_j v_T(z_j) . w_T(z_j).

    Args:
        v: P1 or discontinuous P1 function (scalar or vector)
        w: Function of the same shape on the same mesh
        weights: Optional per-element factors applied to each nodal contribution

    Returns:
        Value of the (weighted) lumped product
    """
    _same_mesh(v, w)
    allowed = (SpaceKind.P1, SpaceKind.P1DISC, SpaceKind.P1DISC_VECTOR, SpaceKind.BDM)
    _require(v, *allowed)
    _require(w, *allowed)
    if v.space.is_vector != w.space.is_vector:
        raise SpaceMismatchError("Cannot pair a scalar with a vector function")
    a, b = vertex_values(v), vertex_values(w)
    products = a * b if a.ndim == 2 else np.einsum("mjc,mjc->mj", a, b)
    beta = v.mesh.areas / 3.0
    if weights is not None:
        beta = beta * weights
    return float(beta @ products.sum(axis=1))


def element_products(p: FeFunction, q: FeFunction) -> np.ndarray:
    """Exact per-element integrals of p . q for P0 or affine data"""
    mesh = p.mesh
    a, b = vertex_values(p), vertex_values(q)
    if a.ndim == 2:
        pair = np.einsum("mj,mj->m", a, b)
        sums = a.sum(axis=1) * b.sum(axis=1)
    else:
        pair = np.einsum("mjc,mjc->m", a, b)
        sums = np.einsum("mc,mc->m", a.sum(axis=1), b.sum(axis=1))
    return mesh.areas / 12.0 * (pair + sums)


def weighted_inner(p: FeFunction, q: FeFunction, alpha: float) -> float:
    """L2 product weighted elementwise by h_T^(d(2/alpha - 1))"""
    _same_mesh(p, q)
    if p.space.is_vector != q.space.is_vector:
        raise SpaceMismatchError("Cannot pair a scalar with a vector function")
    return float(element_weights(p.mesh, alpha) @ element_products(p, q))


def l2_inner(p: FeFunction, q: FeFunction) -> float:
    return weighted_inner(p, q, 2.0)


def nodal_lift(
    mesh: Triangulation,
    f: Union[Callable[[np.ndarray, np.ndarray], np.ndarray], np.ndarray],
    vector: bool = False
) -> FeFunction:
    """
    Elementwise nodal interpolation.

    Args:
        mesh: Triangulation
        f: Callable (vertex coordinates (m, 3, 2), element indices (m,)) -> values
           at the element vertices seen from inside each element, or the values themselves
        vector: Whether f is vector valued

    Returns:
        Discontinuous P1 function
    """
    if callable(f):
        values = f(mesh.vertex_coordinates, np.arange(mesh.n_elements))
    else:
        values = f
    kind = SpaceKind.P1DISC_VECTOR if vector else SpaceKind.P1DISC
    return FeFunction.from_values(space(mesh, kind), values)


def interpolate_p1(mesh: Triangulation, f: Callable[[np.ndarray], np.ndarray], dirichlet_constrained=False) -> FeFunction:
    """Nodal interpolant of a continuous function"""
    return FeFunction.from_values(space(mesh, SpaceKind.P1, dirichlet_constrained), f(mesh.nodes))


def l2_project_p0(
    mesh: Triangulation,
    f: Callable[[np.ndarray], np.ndarray],
    levels: Union[int, np.ndarray] = 0
) -> FeFunction:
    """Elementwise mean of f by composite quadrature"""
    integrals = element_integrals(mesh, lambda points, bary, elements: f(points), levels)
    return FeFunction.from_values(space(mesh, SpaceKind.P0), integrals / mesh.areas)


# --------------------------------------------------------------------------- BDM

GAUSS_SIDE = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def side_normals(mesh: Triangulation) -> np.ndarray:
    """Outward unit normals of the local sides, shape (m, 3, 2); side k is opposite vertex k"""
    x = mesh.vertex_coordinates
    tangents = x[:, [2, 0, 1]] - x[:, [1, 2, 0]]
    normals = np.stack([tangents[..., 1], -tangents[..., 0]], axis=-1)
    return normals / np.linalg.norm(normals, axis=-1, keepdims=True)


def bdm_space(mesh: Triangulation, neumann_constrained: Optional[bool] = None) -> SpaceDescriptor:
    if neumann_constrained is None:
        neumann_constrained = bool((mesh.boundary_labels == NEUMANN).any())
    return space(mesh, SpaceKind.BDM, neumann_constrained=neumann_constrained)


def bdm_interpolate(
    mesh: Triangulation,
    q: Callable[[np.ndarray], np.ndarray],
    neumann_constrained: Optional[bool] = None
) -> FeFunction:
    """
    Elementwise affine field with the normal moments of q against affine
    functions on every side (two-point Gauss on the sides).
    """
    x = mesh.vertex_coordinates
    normals = side_normals(mesh)
    a_idx = np.array([1, 2, 0])
    b_idx = np.array([2, 0, 1])
    xa, xb = x[:, a_idx], x[:, b_idx]
    length = np.linalg.norm(xb - xa, axis=-1)

    moment_a = np.zeros((mesh.n_elements, 3))
    moment_b = np.zeros((mesh.n_elements, 3))
    for s in GAUSS_SIDE:
        qn = np.einsum("mkc,mkc->mk", q((1.0 - s) * xa + s * xb), normals)
        moment_a += 0.5 * length * qn * (1.0 - s)
        moment_b += 0.5 * length * qn * s

    # endpoint values of the L2 projection of q.n onto affine functions on each side
    trace_a = (4.0 * moment_a - 2.0 * moment_b) / length
    trace_b = (4.0 * moment_b - 2.0 * moment_a) / length

    # vertex j lies on sides j+1 (as endpoint b) and j+2 (as endpoint a)
    values = np.empty((mesh.n_elements, 3, 2))
    for j in range(3):
        k1, k2 = (j + 1) % 3, (j + 2) % 3
        system = np.stack([normals[:, k1], normals[:, k2]], axis=1)
        rhs = np.stack([trace_b[:, k1], trace_a[:, k2]], axis=1)
        det = np.linalg.det(system)
        if (np.abs(det) < 1e-14).any():
            raise SolverError(f"Singular side-moment system on element {int(np.argmin(np.abs(det)))}")
        values[:, j] = np.linalg.solve(system, rhs[..., None])[..., 0]
    return FeFunction.from_values(bdm_space(mesh, neumann_constrained), values)


def constrained_sides(mesh: Triangulation, neumann_constrained: bool = True) -> np.ndarray:
    """Sides carrying skeleton multipliers: interior sides, plus Neumann sides if requested"""
    labels = mesh.edge_labels
    mask = labels == INTERIOR
    if neumann_constrained:
        mask |= labels == NEUMANN
    return np.flatnonzero(mask)


def continuity_constraints(desc: SpaceDescriptor) -> sp.csr_matrix:
    """
    Hybrid constraint map C with C q = 0 iff the normal component of q is
    continuous across interior sides (and vanishes on Neumann sides when the
    space is Neumann constrained).

    Two rows per constrained side, one per side endpoint, testing the normal
    jump against the affine hat functions of the side (scaled by 1/|S|).
    """
    if desc.kind not in (SpaceKind.BDM, SpaceKind.P1DISC_VECTOR):
        raise SpaceMismatchError("Continuity constraints act on elementwise affine vector fields")
    mesh = desc.mesh
    sides = constrained_sides(mesh, desc.neumann_constrained)
    normals = side_normals(mesh)
    owners = mesh.edge_elements[sides]
    local = mesh.edge_local_index[sides]
    endpoints = mesh.edges[sides]

    rows, cols, vals = [], [], []
    for slot in range(2):
        present = owners[:, slot] >= 0
        r = np.flatnonzero(present)
        T = owners[present, slot]
        k = local[present, slot]
        a = (k + 1) % 3
        b = (k + 2) % 3
        n = normals[T, k]
        node_a = mesh.elements[T, a]
        # row 2r tests with the hat of the smaller endpoint, 2r+1 with the larger one
        row_a = 2 * r + (node_a != endpoints[r, 0])
        row_b = 2 * r + (node_a == endpoints[r, 0])
        for row, wa, wb in ((row_a, 1.0 / 3.0, 1.0 / 6.0), (row_b, 1.0 / 6.0, 1.0 / 3.0)):
            for c in range(2):
                rows += [row, row]
                cols += [6 * T + 2 * a + c, 6 * T + 2 * b + c]
                vals += [wa * n[:, c], wb * n[:, c]]

    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(2 * len(sides), 6 * mesh.n_elements))


def nodal_normal_constraints(mesh: Triangulation, tol: float = 1e-12) -> sp.csr_matrix:
    """
    Vanishing normal trace on Neumann sides for continuous P1 vector fields
    (coefficients ordered node-major, shape (K, 2n)).

    A node whose Neumann sides share one normal gets one row n.p(z) = 0,
    a corner node gets p(z) = 0.
    """
    sides = mesh.boundary_edge_index[mesh.boundary_labels == NEUMANN]
    if sides.size == 0:
        return sp.csr_matrix((0, 2 * mesh.n_nodes))
    owners = mesh.edge_elements[sides, 0]
    local = mesh.edge_local_index[sides, 0]
    normals = side_normals(mesh)[owners, local]

    by_node = {}
    for (i, j), n in zip(mesh.edges[sides], normals):
        by_node.setdefault(int(i), []).append(n)
        by_node.setdefault(int(j), []).append(n)

    rows, cols, vals = [], [], []
    count = 0
    for node in sorted(by_node):
        group = by_node[node]
        first = group[0]
        parallel = all(abs(first[0] * n[1] - first[1] * n[0]) <= tol for n in group[1:])
        if parallel:
            rows += [count, count]
            cols += [2 * node, 2 * node + 1]
            vals += [first[0], first[1]]
            count += 1
        else:
            rows += [count, count + 1]
            cols += [2 * node, 2 * node + 1]
            vals += [1.0, 1.0]
            count += 2
    return sp.csr_matrix((vals, (rows, cols)), shape=(count, 2 * mesh.n_nodes))


def bdm_residual(p: FeFunction) -> float:
    """Largest violation of the hybrid constraints"""
    C = continuity_constraints(p.space)
    return float(np.abs(C @ p.coefficients).max()) if C.shape[0] else 0.0


# --------------------------------------------------------------------------- assembly

def gradient_matrix(mesh: Triangulation) -> sp.csr_matrix:
    """Map P1 coefficients to P0-vector gradient coefficients, shape (2m, n)"""
    m = mesh.n_elements
    rows = 2 * np.arange(m)[:, None, None] + np.arange(2)[None, None, :]
    rows = np.broadcast_to(rows, (m, 3, 2))
    cols = np.broadcast_to(mesh.elements[:, :, None], (m, 3, 2))
    return sp.csr_matrix(
        (mesh.grad_barycentric.reshape(-1), (rows.reshape(-1), cols.reshape(-1))),
        shape=(2 * m, mesh.n_nodes)
    )


def divergence_matrix(mesh: Triangulation) -> sp.csr_matrix:
    """Map discontinuous affine vector coefficients to P0 divergences, shape (m, 6m)"""
    m = mesh.n_elements
    rows = np.repeat(np.arange(m), 6)
    cols = np.arange(6 * m)
    return sp.csr_matrix((mesh.grad_barycentric.reshape(-1), (rows, cols)), shape=(m, 6 * m))


def p1_to_vertex_matrix(mesh: Triangulation, components: int = 1) -> sp.csr_matrix:
    """Embedding of continuous P1 (scalar or vector) into the discontinuous layout"""
    m = mesh.n_elements
    if components == 1:
        return sp.csr_matrix(
            (np.ones(3 * m), (np.arange(3 * m), mesh.elements.reshape(-1))),
            shape=(3 * m, mesh.n_nodes)
        )
    rows = np.arange(6 * m)
    cols = (2 * mesh.elements[:, :, None] + np.arange(2)).reshape(-1)
    return sp.csr_matrix((np.ones(6 * m), (rows, cols)), shape=(6 * m, 2 * mesh.n_nodes))


def stiffness_matrix(mesh: Triangulation, weights: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """P1 stiffness matrix sum_T w_T |T| grad phi_i . grad phi_j"""
    scale = mesh.areas if weights is None else mesh.areas * weights
    G = gradient_matrix(mesh)
    return (G.T @ sp.diags(np.repeat(scale, 2)) @ G).tocsr()


def mass_matrix(mesh: Triangulation) -> sp.csr_matrix:
    """Consistent P1 mass matrix"""
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    rows = np.repeat(mesh.elements, 3, axis=1).reshape(-1)
    cols = np.tile(mesh.elements, (1, 3)).reshape(-1)
    vals = (mesh.areas[:, None, None] * local).reshape(-1)
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def vertex_lumped_weights(mesh: Triangulation, weights: Optional[np.ndarray] = None, components: int = 1) -> np.ndarray:
    """Diagonal of the lumped product on the discontinuous layout"""
    beta = mesh.areas / 3.0 if weights is None else mesh.areas * weights / 3.0
    return np.repeat(beta, 3 * components)


# --------------------------------------------------------------------------- prolongation

def prolong(fn: FeFunction, fine_mesh: Triangulation) -> FeFunction:
    """
    Transfer a function to a mesh produced by one ``refine`` call.

    P1 and discontinuous affine functions are reproduced exactly; P0 data is injected.
    """
    coarse = fn.mesh
    if fine_mesh is coarse:
        return fn
    if fine_mesh.element_parents is None or fine_mesh.node_parents is None:
        raise SpaceMismatchError("Target mesh carries no refinement history")
    if fine_mesh.n_nodes - len(fine_mesh.node_parents) != coarse.n_nodes:
        raise SpaceMismatchError("Target mesh is not a refinement of the function's mesh")

    desc = SpaceDescriptor(fn.kind, fine_mesh, fn.space.dirichlet_constrained, fn.space.neumann_constrained)
    where, _ = _LAYOUT[fn.kind]
    parents = fine_mesh.element_parents
    if where == "node":
        vals = np.concatenate([fn.values, fn.values[fine_mesh.node_parents].mean(axis=1)])
        return FeFunction.from_values(desc, vals)
    if where == "element":
        return FeFunction.from_values(desc, fn.values[parents])

    # barycentric coordinates of the child vertices in their parents
    centroid = coarse.vertex_coordinates.mean(axis=1)[parents]
    offset = fine_mesh.vertex_coordinates - centroid[:, None, :]
    bary = 1.0 / 3.0 + np.einsum("mkc,mjc->mkj", offset, coarse.grad_barycentric[parents])
    parent_vals = fn.values[parents]
    if parent_vals.ndim == 2:
        vals = np.einsum("mkj,mj->mk", bary, parent_vals)
    else:
        vals = np.einsum("mkj,mjc->mkc", bary, parent_vals)
    return FeFunction.from_values(desc, vals)


def dirichlet_mask(mesh: Triangulation) -> np.ndarray:
    """Boolean mask of the nodes on Dirichlet sides"""
    mask = np.zeros(mesh.n_nodes, dtype=bool)
    mask[mesh.boundary[mesh.boundary_labels == DIRICHLET].reshape(-1)] = True
    return mask

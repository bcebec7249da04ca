"""
Nonlinear Laplace Problem
Primal and dual p-Laplace energies, ADMM splittings and a posteriori estimators
"""
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg

from pdafem.core.config import settings
from pdafem.core.exceptions import IncompatibleDataError, InfeasibleError, ValidationError
from pdafem.fem.mesh import DIRICHLET, Triangulation
from pdafem.fem.quadrature import element_integrals, point_elements, refinement_levels
from pdafem.fem.spaces import (
    FeFunction, SpaceKind, bdm_space, continuity_constraints, dirichlet_mask, divergence_bdm,
    divergence_matrix, element_weights, gradient_matrix, gradient_p1, prolong, side_normals,
    space, stiffness_matrix, vertex_lumped_weights,
)
from pdafem.problems.base import ConvexProblem, EstimatorReport, SolveResult
from pdafem.problems.benchmarks import LShapeBenchmark
from pdafem.schemas.solver import AdmmConfig
from pdafem.solvers.admm import AdmmState, SaddleProblem, admm_run
from pdafem.solvers.kkt import EqualityConstrainedQP
from pdafem.solvers.local import prox_power
from pdafem.utils.logger import logger


DIVERGENCE_TOL = 1e-10
CONTINUITY_TOL = 1e-8
EXACT_LEVELS = 2


def _safe_power(values: np.ndarray, exponent: float) -> np.ndarray:
    """values**exponent with 0**negative read as 0"""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(values > 0, np.abs(values) ** exponent, 0.0)


class PLaplaceProblem(ConvexProblem):
    """
    Minimize (1/sigma) int |grad u|^sigma - int f_h u over P1 functions
    matching the nodal Dirichlet data; the dual maximizes
    -(1/sigma') int I_h |p|^sigma' + int_{Gamma_D} u_D p.n over hybrid BDM
    fields with div p = -f_h.
    """

    problem_id = "plaplace"

    def __init__(
        self,
        mesh: Triangulation,
        sigma: float,
        source: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        dirichlet: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        benchmark: Optional[LShapeBenchmark] = None,
        singular_point: Optional[tuple] = None,
        discrete_source: Optional[np.ndarray] = None,
        discrete_dirichlet: Optional[np.ndarray] = None
    ):
        if sigma <= 1.0:
            raise ValidationError(f"sigma must exceed 1, got {sigma}")
        super().__init__(mesh, name=f"plaplace(sigma={sigma:g})")
        self.sigma = float(sigma)
        self.sigma_prime = self.sigma / (self.sigma - 1.0)
        self.source = source
        self.dirichlet = dirichlet
        self.benchmark = benchmark
        self.singular_point = singular_point if singular_point is not None else ((0.0, 0.0) if benchmark else None)
        # elementwise source and nodal boundary values fixed on this mesh
        self.discrete_source = None if discrete_source is None else np.asarray(discrete_source, dtype=np.float64)
        self.discrete_dirichlet = None if discrete_dirichlet is None else np.asarray(discrete_dirichlet, dtype=np.float64)
        if self.discrete_source is not None and self.discrete_source.shape != (mesh.n_elements,):
            raise ValidationError(f"Discrete source needs {mesh.n_elements} values, got {self.discrete_source.shape}")
        if self.discrete_dirichlet is not None and self.discrete_dirichlet.shape != (mesh.n_nodes,):
            raise ValidationError(f"Discrete boundary data needs {mesh.n_nodes} values, got {self.discrete_dirichlet.shape}")

    @classmethod
    def from_benchmark(cls, benchmark: LShapeBenchmark, mesh: Optional[Triangulation] = None) -> "PLaplaceProblem":
        return cls(
            mesh if mesh is not None else benchmark.mesh(),
            benchmark.sigma,
            source=benchmark.source,
            dirichlet=benchmark.exact_u,
            benchmark=benchmark
        )

    def on_mesh(self, mesh: Triangulation) -> "PLaplaceProblem":
        if self.discrete_source is not None or self.discrete_dirichlet is not None:
            return self.reference_problem(mesh)
        return PLaplaceProblem(mesh, self.sigma, self.source, self.dirichlet, self.benchmark, self.singular_point)

    def reference_problem(self, mesh: Triangulation) -> "PLaplaceProblem":
        """
        The same problem on a one-step refinement of ``self.mesh`` with f_h
        and the piecewise affine Dirichlet trace of this mesh held fixed.

        Its optimal energy lies above every feasible dual energy of this
        level, so it is the reference for the energy reliability bound.
        """
        lift = FeFunction.from_values(space(self.mesh, SpaceKind.P1), self.dirichlet_values)
        return PLaplaceProblem(
            mesh,
            self.sigma,
            discrete_source=prolong(self.f_h, mesh).values,
            discrete_dirichlet=prolong(lift, mesh).values
        )

    def data_arrays(self) -> Tuple[np.ndarray, ...]:
        return (self.f_h.values, self.dirichlet_values)

    # ------------------------------------------------------------------ data

    @cached_property
    def quadrature_levels(self) -> np.ndarray:
        if self.singular_point is None:
            return np.zeros(self.mesh.n_elements, dtype=np.int64)
        touching = point_elements(self.mesh, self.singular_point)
        return refinement_levels(touching, settings.QUADRATURE_SINGULAR_LEVELS, 0)

    @cached_property
    def f_h(self) -> FeFunction:
        p0 = space(self.mesh, SpaceKind.P0)
        if self.discrete_source is not None:
            return FeFunction.from_values(p0, self.discrete_source)
        if self.source is None:
            return FeFunction.zeros(p0)
        integrals = element_integrals(self.mesh, lambda x, bary, el: self.source(x), self.quadrature_levels)
        return FeFunction.from_values(p0, integrals / self.mesh.areas)

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        return dirichlet_mask(self.mesh)

    @cached_property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_nodes)

    @cached_property
    def dirichlet_values(self) -> np.ndarray:
        """Nodal vector carrying u_D on Dirichlet nodes and zero elsewhere"""
        values = np.zeros(self.mesh.n_nodes)
        if self.discrete_dirichlet is not None:
            values[self.dirichlet_nodes] = self.discrete_dirichlet[self.dirichlet_nodes]
        elif self.dirichlet is not None and self.dirichlet_nodes.any():
            values[self.dirichlet_nodes] = self.dirichlet(self.mesh.nodes[self.dirichlet_nodes])
        return values

    @cached_property
    def load_vector(self) -> np.ndarray:
        """int f_h phi_z for every node"""
        mesh = self.mesh
        return np.bincount(
            mesh.elements.reshape(-1),
            weights=np.repeat(self.f_h.values * mesh.areas / 3.0, 3),
            minlength=mesh.n_nodes
        )

    @cached_property
    def primal_weights(self) -> np.ndarray:
        return element_weights(self.mesh, self.sigma)

    @cached_property
    def dual_weights(self) -> np.ndarray:
        return element_weights(self.mesh, self.sigma_prime)

    @cached_property
    def boundary_pairing(self) -> np.ndarray:
        """Vector l with l . p = int_{Gamma_D} u_D,h p.n for discontinuous affine p"""
        mesh = self.mesh
        vec = np.zeros(6 * mesh.n_elements)
        sides = mesh.boundary_edge_index[mesh.boundary_labels == DIRICHLET]
        if sides.size == 0 or not self.dirichlet_values.any():
            return vec
        T = mesh.edge_elements[sides, 0]
        k = mesh.edge_local_index[sides, 0]
        a, b = (k + 1) % 3, (k + 2) % 3
        n = side_normals(mesh)[T, k]
        length = mesh.edge_lengths[sides]
        ua = self.dirichlet_values[mesh.elements[T, a]]
        ub = self.dirichlet_values[mesh.elements[T, b]]
        for c in range(2):
            np.add.at(vec, 6 * T + 2 * a + c, length * n[:, c] * (ua / 3.0 + ub / 6.0))
            np.add.at(vec, 6 * T + 2 * b + c, length * n[:, c] * (ua / 6.0 + ub / 3.0))
        return vec

    @cached_property
    def dual_space(self):
        return bdm_space(self.mesh)

    @cached_property
    def continuity_map(self) -> sp.csr_matrix:
        return continuity_constraints(self.dual_space)

    @cached_property
    def dual_constraints(self):
        """Stacked constraint map [div; hybrid continuity] and right-hand side"""
        mesh = self.mesh
        D = divergence_matrix(mesh)
        d = -self.f_h.values.copy()
        if not self.dirichlet_nodes.any():
            total = float(mesh.areas @ self.f_h.values)
            scale = float(mesh.areas @ np.abs(self.f_h.values))
            if abs(total) > 1e-10 * max(scale, 1.0):
                raise IncompatibleDataError(
                    f"Without Dirichlet boundary the source must have zero mean (int f_h = {total:.3e})"
                )
            # the divergence rows sum to the boundary flux, which the Neumann rows already fix
            D, d = D[:-1], d[:-1]
        C = self.continuity_map
        return sp.vstack([D, C]).tocsr(), np.concatenate([d, np.zeros(C.shape[0])])

    # ------------------------------------------------------------------ feasibility

    def check_dual_feasible(self, p: FeFunction):
        div = divergence_bdm(p).values
        residual = np.abs(div + self.f_h.values)
        scale = max(1.0, float(np.abs(self.f_h.values).max(initial=0.0)))
        if residual.size and residual.max() > DIVERGENCE_TOL * scale:
            worst = int(np.argmax(residual))
            raise InfeasibleError(
                f"div p + f_h = {residual[worst]:.3e} on element {worst}",
                worst_index=worst,
                violation=float(residual[worst])
            )
        C = self.continuity_map
        if C.shape[0]:
            jumps = np.abs(C @ p.coefficients)
            limit = CONTINUITY_TOL * max(1.0, float(np.abs(p.coefficients).max()))
            if jumps.max() > limit:
                worst_side = int(np.argmax(jumps)) // 2
                raise InfeasibleError(
                    f"normal jump {jumps.max():.3e} on constrained side {worst_side}",
                    worst_index=worst_side,
                    violation=float(jumps.max())
                )

    def check_primal_feasible(self, v: FeFunction):
        mask = self.dirichlet_nodes
        if mask.any():
            deviation = np.abs(v.values[mask] - self.dirichlet_values[mask]).max()
            if deviation > 1e-10 * max(1.0, np.abs(self.dirichlet_values).max()):
                raise ValidationError(f"Primal function violates the Dirichlet data by {deviation:.3e}")

    # ------------------------------------------------------------------ energies

    def energy_primal(self, u: FeFunction) -> float:
        mesh = self.mesh
        grads = np.linalg.norm(gradient_p1(u).values, axis=1)
        means = u.values[mesh.elements].mean(axis=1)
        return float(mesh.areas @ (grads ** self.sigma / self.sigma - self.f_h.values * means))

    def _lumped_power(self, p: FeFunction) -> np.ndarray:
        """int_T I_h |p|^sigma' per element"""
        norms = np.linalg.norm(p.values, axis=2)
        return self.mesh.areas / 3.0 * (norms ** self.sigma_prime).sum(axis=1)

    def _exact_power(self, p: FeFunction, levels: int = EXACT_LEVELS) -> np.ndarray:
        """int_T |p|^sigma' per element by composite quadrature"""
        values = p.values

        def integrand(points, bary, elements):
            field = np.einsum("qj,mjc->mqc", bary, values[elements])
            return np.linalg.norm(field, axis=2) ** self.sigma_prime

        return element_integrals(self.mesh, integrand, levels)

    def energy_dual(self, p: FeFunction) -> float:
        return self.energy_dual_lumped(p)

    def energy_dual_lumped(self, p: FeFunction) -> float:
        self.check_dual_feasible(p)
        return float(-self._lumped_power(p).sum() / self.sigma_prime + self.boundary_pairing @ p.coefficients)

    def energy_dual_exact(self, p: FeFunction) -> float:
        self.check_dual_feasible(p)
        return float(-self._exact_power(p).sum() / self.sigma_prime + self.boundary_pairing @ p.coefficients)

    # ------------------------------------------------------------------ estimators

    def _gap_density(self, v: FeFunction, q: FeFunction, power: np.ndarray) -> EstimatorReport:
        self.check_primal_feasible(v)
        self.check_dual_feasible(q)
        mesh = self.mesh
        grads = gradient_p1(v).values
        q_means = q.values.mean(axis=1)
        indicators = (
            mesh.areas * np.linalg.norm(grads, axis=1) ** self.sigma / self.sigma
            + power / self.sigma_prime
            - mesh.areas * np.einsum("mc,mc->m", grads, q_means)
        )
        return EstimatorReport(indicators)

    def estimator(self, v: FeFunction, q: FeFunction) -> EstimatorReport:
        return self.estimator_pd(v, q)

    def estimator_pd(self, v: FeFunction, q: FeFunction) -> EstimatorReport:
        """Lumped primal-dual gap, E^h(v) - D^h_lumped(q) split into element contributions"""
        return self._gap_density(v, q, self._lumped_power(q))

    def estimator_pd_exact(self, v: FeFunction, q: FeFunction) -> EstimatorReport:
        """Gap with exactly integrated |q|^sigma' (bounded above by the lumped one)"""
        return self._gap_density(v, q, self._exact_power(q))

    def estimator_residual(self, u: FeFunction) -> EstimatorReport:
        """Residual estimator: volume terms plus gradient jumps on interior sides"""
        mesh = self.mesh
        s, sp_ = self.sigma, self.sigma_prime
        grads = gradient_p1(u).values
        grad_norm = np.linalg.norm(grads, axis=1)
        f = np.abs(self.f_h.values)
        h = mesh.diameters

        base = grad_norm ** (s - 1.0) + h * f
        eta_sq = mesh.areas * _safe_power(base, sp_ - 2.0) * h ** 2 * f ** 2

        interior = np.flatnonzero(mesh.edge_elements[:, 1] >= 0)
        t_plus = mesh.edge_elements[interior, 0]
        t_minus = mesh.edge_elements[interior, 1]
        jump = np.linalg.norm(grads[t_plus] - grads[t_minus], axis=1)
        jump_sq = jump ** 2
        side_sq = (
            mesh.areas[t_plus] * _safe_power(grad_norm[t_plus] + jump, s - 2.0) * jump_sq
            + mesh.areas[t_minus] * _safe_power(grad_norm[t_minus] + jump, s - 2.0) * jump_sq
        )
        np.add.at(eta_sq, t_plus, side_sq)
        np.add.at(eta_sq, t_minus, side_sq)
        return EstimatorReport(eta_sq)

    # ------------------------------------------------------------------ errors and diagnostics

    def _V(self, z: np.ndarray) -> np.ndarray:
        norm = np.linalg.norm(z, axis=-1)
        return _safe_power(norm, (self.sigma - 2.0) / 2.0)[..., None] * z if self.sigma != 2.0 else z

    def quasi_norm_error(self, u: FeFunction) -> float:
        """||V(grad u) - V(grad u_h)|| against the benchmark solution"""
        if self.benchmark is None:
            raise ValidationError("Quasi-norm error needs a benchmark with exact solution")
        grads = gradient_p1(u).values
        v_h = self._V(grads)

        def integrand(points, bary, elements):
            diff = self._V(self.benchmark.exact_gradient(points)) - v_h[elements][:, None, :]
            return np.einsum("mqc,mqc->mq", diff, diff)

        total = element_integrals(self.mesh, integrand, self.quadrature_levels).sum()
        return float(np.sqrt(max(total, 0.0)))

    def exact_error(self, u: FeFunction) -> Optional[float]:
        return self.quasi_norm_error(u) if self.benchmark is not None else None

    def dual_norm(self, p: FeFunction) -> float:
        """||p||_{L^sigma'}"""
        return float(self._exact_power(p, levels=1).sum() ** (1.0 / self.sigma_prime))

    def source_oscillation(self) -> float:
        """||f - f_h||_{L^sigma'}"""
        if self.source is None:
            return 0.0
        f_h = self.f_h.values

        def integrand(points, bary, elements):
            return np.abs(self.source(points) - f_h[elements][:, None]) ** self.sigma_prime

        total = element_integrals(self.mesh, integrand, self.quadrature_levels).sum()
        return float(total ** (1.0 / self.sigma_prime))

    def oscillation(self, p: Optional[FeFunction] = None) -> float:
        """||p_h||^(1/(sigma-1)) ||f - f_h||_{L^sigma'} (constant one); without p only the data term"""
        osc = self.source_oscillation()
        if p is None:
            return osc
        return self.dual_norm(p) ** (1.0 / (self.sigma - 1.0)) * osc

    # ------------------------------------------------------------------ solvers

    @cached_property
    def gradient_operator(self) -> sp.csr_matrix:
        return gradient_matrix(self.mesh)

    @cached_property
    def _primal_factor(self):
        K = stiffness_matrix(self.mesh, self.primal_weights)
        free = self.free_nodes
        solve = linalg.factorized(sp.csc_matrix(K[free][:, free])) if free.size else None
        lifted = K @ self.dirichlet_values
        return solve, lifted

    @cached_property
    def _dual_qp(self) -> EqualityConstrainedQP:
        C, _ = self.dual_constraints
        W = vertex_lumped_weights(self.mesh, self.dual_weights, components=2)
        return EqualityConstrainedQP(sp.diags(W), C, name=f"{self.name} dual")

    def feasible_dual_init(self) -> FeFunction:
        """Minimum-norm field with div p = -f_h satisfying the hybrid constraints"""
        C, d = self.dual_constraints
        H = sp.diags(vertex_lumped_weights(self.mesh, components=2))
        p, _ = EqualityConstrainedQP(H, C, name=f"{self.name} init").solve(np.zeros(H.shape[0]), d)
        logger.debug(f"{self.name}: feasible dual start with {C.shape[0]} constraints")
        return FeFunction.from_values(self.dual_space, p)

    def initial_primal_state(self, tau: float) -> AdmmState:
        u0 = FeFunction.from_values(space(self.mesh, SpaceKind.P1, dirichlet_constrained=True), self.dirichlet_values)
        r0 = gradient_p1(u0)
        return AdmmState(primary=u0, auxiliary=r0, multiplier=FeFunction.zeros(r0.space), tau=tau)

    def initial_dual_state(self, tau: float) -> AdmmState:
        p0 = self.feasible_dual_init()
        q0 = FeFunction.from_values(space(self.mesh, SpaceKind.P1DISC_VECTOR), p0.values)
        return AdmmState(primary=p0, auxiliary=q0, multiplier=FeFunction.zeros(q0.space), tau=tau)

    def solve_primal(self, config: AdmmConfig, initial: Optional[AdmmState] = None) -> SolveResult:
        initial = initial if initial is not None else self.initial_primal_state(config.tau0)
        state = admm_run(PrimalSplitting(self), config, initial)
        return SolveResult(state.primary, state.iterations, state.converged, state)

    def solve_dual(self, config: AdmmConfig, initial: Optional[AdmmState] = None) -> SolveResult:
        initial = initial if initial is not None else self.initial_dual_state(config.tau0)
        state = admm_run(DualSplitting(self), config, initial)
        return SolveResult(state.primary, state.iterations, state.converged, state)


class PrimalSplitting(SaddleProblem):
    """grad u = r with the sigma-weighted pairing; r lives in P0 vectors"""

    def __init__(self, problem: PLaplaceProblem):
        self.problem = problem
        self.name = f"{problem.name} primal"
        mesh = problem.mesh
        self._weights = np.repeat(mesh.areas * problem.primal_weights, 2)
        self._p1 = space(mesh, SpaceKind.P1, dirichlet_constrained=True)
        self._p0v = space(mesh, SpaceKind.P0_VECTOR)

    def pairing_weights(self) -> np.ndarray:
        return self._weights

    def coupling(self, primary: FeFunction) -> np.ndarray:
        return self.problem.gradient_operator @ primary.coefficients

    def update_primary(self, target: np.ndarray, tau: float) -> FeFunction:
        prob = self.problem
        solve, lifted = prob._primal_factor
        rhs = prob.load_vector / tau + prob.gradient_operator.T @ (self._weights * target) - lifted
        u = prob.dirichlet_values.copy()
        if solve is not None:
            u[prob.free_nodes] = solve(rhs[prob.free_nodes])
        return FeFunction.from_values(self._p1, u)

    def update_auxiliary(self, target: np.ndarray, tau: float) -> FeFunction:
        prob = self.problem
        r = prox_power(target.reshape(-1, 2), prob.sigma, prob.primal_weights, tau)
        return FeFunction.from_values(self._p0v, r)


class DualSplitting(SaddleProblem):
    """p = q with the sigma'-weighted lumped pairing; q is discontinuous affine"""

    def __init__(self, problem: PLaplaceProblem):
        self.problem = problem
        self.name = f"{problem.name} dual"
        mesh = problem.mesh
        self._weights = vertex_lumped_weights(mesh, problem.dual_weights, components=2)
        self._disc = space(mesh, SpaceKind.P1DISC_VECTOR)
        self._node_weights = np.repeat(problem.dual_weights[:, None], 3, axis=1)

    def pairing_weights(self) -> np.ndarray:
        return self._weights

    def coupling(self, primary: FeFunction) -> np.ndarray:
        return primary.coefficients

    def update_primary(self, target: np.ndarray, tau: float) -> FeFunction:
        prob = self.problem
        _, d = prob.dual_constraints
        p, _ = prob._dual_qp.solve(prob.boundary_pairing / tau + self._weights * target, d)
        return FeFunction.from_values(prob.dual_space, p)

    def update_auxiliary(self, target: np.ndarray, tau: float) -> FeFunction:
        prob = self.problem
        q = prox_power(target.reshape(-1, 3, 2), prob.sigma_prime, self._node_weights, tau)
        return FeFunction.from_values(self._disc, q)

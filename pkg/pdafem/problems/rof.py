"""
ROF Problem
Total-variation denoising in primal and dual form, gap estimator and reconstructions
"""
from functools import cached_property
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse import linalg

from pdafem.core.config import settings
from pdafem.core.exceptions import InfeasibleError, ValidationError
from pdafem.fem.mesh import Triangulation
from pdafem.fem.quadrature import element_integrals, interface_elements, refinement_levels
from pdafem.fem.spaces import (
    FeFunction, SpaceKind, bdm_space, continuity_constraints, dirichlet_mask, divergence_bdm,
    divergence_matrix, gradient_matrix, gradient_p1, mass_matrix, nodal_normal_constraints,
    p1_to_vertex_matrix, space, stiffness_matrix, vertex_lumped_weights,
)
from pdafem.problems.base import ConvexProblem, EstimatorReport, SolveResult
from pdafem.problems.benchmarks import RofBenchmark
from pdafem.schemas.solver import AdmmConfig
from pdafem.solvers.admm import AdmmState, SaddleProblem, admm_run
from pdafem.solvers.kkt import EqualityConstrainedQP
from pdafem.solvers.local import project_ball, shrink
from pdafem.utils.logger import logger


BALL_TOL = 1e-10
CONTINUITY_TOL = 1e-8
PD_STEP_SAFETY = 0.9


def _element_sq_distance(u_vertex: np.ndarray, c: np.ndarray, areas: np.ndarray) -> np.ndarray:
    """int_T (u - c)^2 for affine u and elementwise constant c"""
    s = u_vertex.sum(axis=1)
    quad = areas / 12.0 * ((u_vertex ** 2).sum(axis=1) + s ** 2)
    return quad - 2.0 * c * areas * s / 3.0 + c ** 2 * areas


class RofProblem(ConvexProblem):
    """
    Minimize int |grad u| + alpha/2 ||u - g_h||^2 over P1 (zero on Dirichlet
    sides); the dual maximizes -1/(2 alpha) ||div p + alpha g_h||^2 + alpha/2 ||g_h||^2
    over vertexwise unit-bounded fields with vanishing normal trace on Neumann sides.

    ``dual_space`` selects continuous P1 vector fields ("C") or the hybrid
    discontinuous ones ("dC").
    """

    problem_id = "rof"

    def __init__(
        self,
        mesh: Triangulation,
        alpha: float,
        g: Callable[[np.ndarray], np.ndarray],
        dual_space: str = "dC",
        gamma: int = 0,
        benchmark: Optional[RofBenchmark] = None,
        level_set: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ):
        if alpha <= 0:
            raise ValidationError(f"alpha must be positive, got {alpha}")
        if dual_space not in ("C", "dC"):
            raise ValidationError(f"dual space must be 'C' or 'dC', got {dual_space}")
        super().__init__(mesh, name=f"rof(alpha={alpha:g}, {dual_space})")
        self.alpha = float(alpha)
        self.g = g
        self.dual_kind = dual_space
        self.gamma = gamma
        self.benchmark = benchmark
        self.level_set = level_set if level_set is not None else (benchmark.level_set if benchmark else None)
        self._primal_factors: Dict[float, Callable] = {}
        self._dual_qps: Dict[float, EqualityConstrainedQP] = {}
        self._pd_factors: Dict[float, Callable] = {}

    @classmethod
    def from_benchmark(
        cls,
        benchmark: RofBenchmark,
        mesh: Optional[Triangulation] = None,
        dual_space: str = "dC",
        gamma: int = 0,
        alpha: Optional[float] = None
    ) -> "RofProblem":
        return cls(
            mesh if mesh is not None else benchmark.mesh(),
            alpha if alpha is not None else benchmark.alpha,
            benchmark.g,
            dual_space=dual_space,
            gamma=gamma,
            benchmark=benchmark
        )

    def on_mesh(self, mesh: Triangulation) -> "RofProblem":
        return RofProblem(mesh, self.alpha, self.g, self.dual_kind, self.gamma, self.benchmark, self.level_set)

    def data_arrays(self) -> Tuple[np.ndarray, ...]:
        return (self.g_h.values,)

    def primal_tolerance(self) -> float:
        return settings.TOL_FACTOR * self.mesh.hbar

    # ------------------------------------------------------------------ data

    def _levels(self, refined: int) -> np.ndarray:
        if self.level_set is None:
            return np.zeros(self.mesh.n_elements, dtype=np.int64)
        return refinement_levels(interface_elements(self.mesh, self.level_set), refined, 0)

    @cached_property
    def g_h(self) -> FeFunction:
        integrals = element_integrals(
            self.mesh, lambda x, bary, el: self.g(x), self._levels(settings.QUADRATURE_INTERFACE_LEVELS)
        )
        return FeFunction.from_values(space(self.mesh, SpaceKind.P0), integrals / self.mesh.areas)

    @cached_property
    def weights(self) -> np.ndarray:
        """h_T^gamma pairing weights of the splittings"""
        return self.mesh.diameters ** self.gamma

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        return dirichlet_mask(self.mesh)

    @cached_property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_nodes)

    @cached_property
    def gradient_operator(self) -> sp.csr_matrix:
        return gradient_matrix(self.mesh)

    @cached_property
    def mass(self) -> sp.csr_matrix:
        return mass_matrix(self.mesh)

    @cached_property
    def data_vector(self) -> np.ndarray:
        """int g_h phi_z for every node"""
        mesh = self.mesh
        return np.bincount(
            mesh.elements.reshape(-1),
            weights=np.repeat(self.g_h.values * mesh.areas / 3.0, 3),
            minlength=mesh.n_nodes
        )

    @cached_property
    def dual_space(self):
        return bdm_space(self.mesh)

    @cached_property
    def continuity_map(self) -> sp.csr_matrix:
        return continuity_constraints(self.dual_space)

    # ------------------------------------------------------------------ energies

    def energy_primal(self, u: FeFunction) -> float:
        mesh = self.mesh
        tv = mesh.areas @ np.linalg.norm(gradient_p1(u).values, axis=1)
        fidelity = _element_sq_distance(u.values[mesh.elements], self.g_h.values, mesh.areas).sum()
        return float(tv + 0.5 * self.alpha * fidelity)

    def check_dual_feasible(self, p: FeFunction):
        norms = np.linalg.norm(p.values, axis=2).reshape(-1)
        if norms.size and norms.max() > 1.0 + BALL_TOL:
            worst = int(np.argmax(norms))
            raise InfeasibleError(
                f"|p| = {norms[worst]:.6g} > 1 at vertex {worst % 3} of element {worst // 3}",
                worst_index=worst,
                violation=float(norms[worst] - 1.0)
            )
        C = self.continuity_map
        if C.shape[0]:
            jumps = np.abs(C @ p.coefficients)
            if jumps.max() > CONTINUITY_TOL:
                worst_side = int(np.argmax(jumps)) // 2
                raise InfeasibleError(
                    f"normal jump {jumps.max():.3e} on constrained side {worst_side}",
                    worst_index=worst_side,
                    violation=float(jumps.max())
                )

    def energy_dual(self, p: FeFunction) -> float:
        self.check_dual_feasible(p)
        areas = self.mesh.areas
        g = self.g_h.values
        residual = divergence_bdm(p).values + self.alpha * g
        return float(-(areas @ residual ** 2) / (2.0 * self.alpha) + 0.5 * self.alpha * (areas @ g ** 2))

    def estimator(self, v: FeFunction, q: FeFunction) -> EstimatorReport:
        return self.estimator_rof(v, q)

    def estimator_rof(self, v: FeFunction, q: FeFunction) -> EstimatorReport:
        """
        eta_T^2 = int_T |grad v| - grad v . q + 1/(2 alpha) (div q - alpha (v - g_h))^2,
        integrated exactly.
        """
        self.check_dual_feasible(q)
        if self.dirichlet_nodes.any() and np.abs(v.values[self.dirichlet_nodes]).max() > 1e-12:
            raise ValidationError("Primal function must vanish on the Dirichlet boundary")
        mesh = self.mesh
        areas = mesh.areas
        grads = gradient_p1(v).values
        c = divergence_bdm(q).values + self.alpha * self.g_h.values
        v_vertex = v.values[mesh.elements]
        square = _element_sq_distance(self.alpha * v_vertex, c, areas)
        indicators = (
            areas * np.linalg.norm(grads, axis=1)
            - areas * np.einsum("mc,mc->m", grads, q.values.mean(axis=1))
            + square / (2.0 * self.alpha)
        )
        return EstimatorReport(indicators)

    def ubar(self, p: FeFunction) -> FeFunction:
        """Reconstruction (1/alpha) div p + g_h"""
        return FeFunction.from_values(
            space(self.mesh, SpaceKind.P0),
            divergence_bdm(p).values / self.alpha + self.g_h.values
        )

    # ------------------------------------------------------------------ errors and diagnostics

    def _l2_distance(self, exact: Callable[[np.ndarray], np.ndarray], fn: FeFunction) -> float:
        vertex = fn.values[self.mesh.elements] if fn.kind == SpaceKind.P1 else None
        values = fn.values

        def integrand(points, bary, elements):
            approx = vertex[elements] @ bary.T if vertex is not None else values[elements][:, None]
            return (exact(points) - approx) ** 2

        levels = self._levels(settings.ERROR_INTERFACE_LEVELS)
        return float(np.sqrt(max(element_integrals(self.mesh, integrand, levels).sum(), 0.0)))

    def l2_error_exact(self, u: FeFunction) -> float:
        """(alpha/2)^(1/2) ||u - u_h|| against the circle solution"""
        if self.benchmark is None or not self.benchmark.has_exact_solution:
            raise ValidationError("No exact solution available")
        return float(np.sqrt(0.5 * self.alpha) * self._l2_distance(self.benchmark.exact_u, u))

    def exact_error(self, u: FeFunction) -> Optional[float]:
        if self.benchmark is None or not self.benchmark.has_exact_solution:
            return None
        return self.l2_error_exact(u)

    def ubar_error(self, p: FeFunction) -> Optional[float]:
        """||u - ubar_h|| against the circle solution"""
        if self.benchmark is None or not self.benchmark.has_exact_solution:
            return None
        return self._l2_distance(self.benchmark.exact_u, self.ubar(p))

    def oscillation(self) -> float:
        """||g - g_h||"""
        return self._l2_distance(self.g, self.g_h)

    def jump_diagnostic(self, ubar: FeFunction, band: float = 0.1) -> float:
        """Sum of |S| |[ubar]| over interior sides within ``band`` of the data interface"""
        mesh = self.mesh
        interior = np.flatnonzero(mesh.edge_elements[:, 1] >= 0)
        if self.level_set is not None:
            mid = mesh.nodes[mesh.edges[interior]].mean(axis=1)
            interior = interior[np.abs(self.level_set(mid)) <= band]
        owners = mesh.edge_elements[interior]
        jumps = np.abs(ubar.values[owners[:, 0]] - ubar.values[owners[:, 1]])
        return float(mesh.edge_lengths[interior] @ jumps)

    # ------------------------------------------------------------------ ADMM

    def primal_factor(self, tau: float) -> Callable:
        """Factorization of alpha M + tau K_w on the free nodes"""
        if tau not in self._primal_factors:
            free = self.free_nodes
            A = self.alpha * self.mass + tau * stiffness_matrix(self.mesh, self.weights)
            self._primal_factors[tau] = linalg.factorized(sp.csc_matrix(A[free][:, free]))
        return self._primal_factors[tau]

    def dual_qp(self, tau: float) -> EqualityConstrainedQP:
        """Constrained p-update system for the current step size"""
        if tau not in self._dual_qps:
            mesh = self.mesh
            D = divergence_matrix(mesh)
            H = D.T @ sp.diags(mesh.areas) @ D / self.alpha
            H = H + tau * sp.diags(vertex_lumped_weights(mesh, self.weights, components=2))
            if self.dual_kind == "dC":
                qp = EqualityConstrainedQP(H, self.continuity_map, name=f"{self.name} dual")
            else:
                E = self.embedding
                qp = EqualityConstrainedQP(E.T @ H @ E, nodal_normal_constraints(mesh), name=f"{self.name} dual")
            self._dual_qps[tau] = qp
        return self._dual_qps[tau]

    @cached_property
    def embedding(self) -> sp.csr_matrix:
        return p1_to_vertex_matrix(self.mesh, components=2)

    def feasible_projection(self, p: FeFunction) -> FeFunction:
        """
        Scale the values at every node by a common factor so that all of them
        lie in the unit ball; normal continuity and Neumann traces are kept.
        """
        mesh = self.mesh
        norms = np.linalg.norm(p.values, axis=2)
        node_max = np.zeros(mesh.n_nodes)
        np.maximum.at(node_max, mesh.elements.reshape(-1), norms.reshape(-1))
        scale = 1.0 / np.maximum(node_max, 1.0)
        if node_max.max(initial=0.0) > 1.0:
            logger.debug(f"{self.name}: rescaled dual field, largest vertex norm {node_max.max():.6g}")
        return p.with_values(p.values * scale[mesh.elements][..., None])

    def solve_primal(self, config: AdmmConfig, initial: Optional[AdmmState] = None) -> SolveResult:
        if initial is None:
            u0 = FeFunction.zeros(space(self.mesh, SpaceKind.P1))
            r0 = FeFunction.zeros(space(self.mesh, SpaceKind.P0_VECTOR))
            initial = AdmmState(primary=u0, auxiliary=r0, multiplier=r0, tau=config.tau0)
        state = admm_run(RofPrimalSplitting(self), config, initial)
        return SolveResult(state.primary, state.iterations, state.converged, state)

    def solve_dual(self, config: AdmmConfig, initial: Optional[AdmmState] = None) -> SolveResult:
        if initial is None:
            p0 = FeFunction.zeros(self.dual_space)
            q0 = FeFunction.zeros(space(self.mesh, SpaceKind.P1DISC_VECTOR))
            initial = AdmmState(primary=p0, auxiliary=q0, multiplier=q0, tau=config.tau0)
        state = admm_run(RofDualSplitting(self), config, initial)
        p = self.feasible_projection(state.primary)
        logger.debug(f"{self.name}: dual energy after projection {self.energy_dual(p):.10g}")
        return SolveResult(p, state.iterations, state.converged, state)

    # ------------------------------------------------------------------ primal-dual iteration

    @cached_property
    def operator_norm(self) -> float:
        """Bound L with ||grad u||_A <= L ||u||_h"""
        grads_sq = (self.mesh.grad_barycentric ** 2).sum(axis=(1, 2))
        return float(np.sqrt(3.0 * grads_sq.max()))

    def primal_dual_steps(self) -> Tuple[float, float]:
        """
        Equal steps tau = sigma = hbar^(1/2)/2, capped at PD_STEP_SAFETY/L so that
        tau sigma L^2 < 1 on meshes where the nominal step would violate it
        """
        nominal = np.sqrt(self.mesh.hbar) / 2.0
        cap = PD_STEP_SAFETY / self.operator_norm
        if nominal > cap:
            logger.debug(f"{self.name} primal-dual: step {nominal:.4g} capped at {cap:.4g}")
            return cap, cap
        return nominal, nominal

    def _pd_factor(self, tau: float) -> Callable:
        if tau not in self._pd_factors:
            free = self.free_nodes
            lumped = sp.diags(self.mesh.node_patch_areas)
            A = self.alpha * self.mass + lumped / tau
            self._pd_factors[tau] = linalg.factorized(sp.csc_matrix(A[free][:, free]))
        return self._pd_factors[tau]

    def primal_dual_step(
        self,
        state: Tuple[FeFunction, FeFunction, FeFunction],
        tau: float,
        sigma: Optional[float] = None
    ) -> Tuple[FeFunction, FeFunction, FeFunction]:
        """
        One primal-dual iteration from (u_prev, u, p):
        extrapolate, project p + sigma grad(2u - u_prev) onto the unit ball
        elementwise, then solve the lumped proximal step for u.

        Returns:
            (u, u_next, p_next)
        """
        u_prev, u, p = state
        sigma = tau if sigma is None else sigma
        mesh = self.mesh
        extrapolated = 2.0 * u.coefficients - u_prev.coefficients
        grad = (self.gradient_operator @ extrapolated).reshape(-1, 2)
        p_next = p.with_values(project_ball(p.values + sigma * grad))

        lumped = mesh.node_patch_areas
        rhs = (
            self.alpha * self.data_vector
            + lumped * u.coefficients / tau
            - self.gradient_operator.T @ (np.repeat(mesh.areas, 2) * p_next.coefficients)
        )
        u_next = np.zeros(mesh.n_nodes)
        free = self.free_nodes
        u_next[free] = self._pd_factor(tau)(rhs[free])
        return u, u.with_values(u_next), p_next

    def solve_primal_dual(self, config: AdmmConfig) -> SolveResult:
        """Primal solve by repeated ``primal_dual_step`` until the step change drops below tol"""
        mesh = self.mesh
        tau, sigma = self.primal_dual_steps()
        u = FeFunction.zeros(space(mesh, SpaceKind.P1))
        p = FeFunction.zeros(space(mesh, SpaceKind.P0_VECTOR))
        state = (u, u, p)
        lumped = mesh.node_patch_areas
        areas2 = np.repeat(mesh.areas, 2)

        for it in range(1, config.max_iters + 1):
            _, u_old, p_old = state
            state = self.primal_dual_step(state, tau, sigma)
            _, u_new, p_new = state
            du = np.sqrt(lumped @ (u_new.coefficients - u_old.coefficients) ** 2)
            dp = np.sqrt(areas2 @ (p_new.coefficients - p_old.coefficients) ** 2)
            change = max(du, dp) / tau
            if change <= config.tol:
                logger.info(f"{self.name} primal-dual: converged after {it} iterations")
                return SolveResult(u_new, it, True)
        logger.warning(f"{self.name} primal-dual: no convergence in {config.max_iters} iterations")
        return SolveResult(state[1], config.max_iters, False)


class RofPrimalSplitting(SaddleProblem):
    """grad u = r in the h^gamma-weighted pairing; r lives in P0 vectors"""

    def __init__(self, problem: RofProblem):
        self.problem = problem
        self.name = f"{problem.name} primal"
        mesh = problem.mesh
        self._weights = np.repeat(mesh.areas * problem.weights, 2)
        self._p1 = space(mesh, SpaceKind.P1)
        self._p0v = space(mesh, SpaceKind.P0_VECTOR)

    def pairing_weights(self) -> np.ndarray:
        return self._weights

    def coupling(self, primary: FeFunction) -> np.ndarray:
        return self.problem.gradient_operator @ primary.coefficients

    def update_primary(self, target: np.ndarray, tau: float) -> FeFunction:
        prob = self.problem
        rhs = prob.alpha * prob.data_vector + tau * (prob.gradient_operator.T @ (self._weights * target))
        u = np.zeros(prob.mesh.n_nodes)
        free = prob.free_nodes
        u[free] = prob.primal_factor(tau)(rhs[free])
        return FeFunction.from_values(self._p1, u)

    def update_auxiliary(self, target: np.ndarray, tau: float) -> FeFunction:
        prob = self.problem
        r = shrink(target.reshape(-1, 2), 1.0 / (prob.weights * tau))
        return FeFunction.from_values(self._p0v, r)


class RofDualSplitting(SaddleProblem):
    """p = q in the lumped pairing; q is constrained to the unit ball at every vertex"""

    def __init__(self, problem: RofProblem):
        self.problem = problem
        self.name = f"{problem.name} dual"
        mesh = problem.mesh
        self._weights = vertex_lumped_weights(mesh, problem.weights, components=2)
        self._disc = space(mesh, SpaceKind.P1DISC_VECTOR)
        D = divergence_matrix(mesh)
        self._data = D.T @ (mesh.areas * problem.g_h.values)

    def pairing_weights(self) -> np.ndarray:
        return self._weights

    def coupling(self, primary: FeFunction) -> np.ndarray:
        return primary.coefficients

    def update_primary(self, target: np.ndarray, tau: float) -> FeFunction:
        prob = self.problem
        b = tau * self._weights * target - self._data
        qp = prob.dual_qp(tau)
        if prob.dual_kind == "dC":
            p, _ = qp.solve(b)
        else:
            nodal, _ = qp.solve(prob.embedding.T @ b)
            p = prob.embedding @ nodal
        return FeFunction.from_values(prob.dual_space, p)

    def update_auxiliary(self, target: np.ndarray, tau: float) -> FeFunction:
        return FeFunction.from_values(self._disc, project_ball(target.reshape(-1, 3, 2)))

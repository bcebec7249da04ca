"""
AFEM Service
SOLVE -> ESTIMATE -> MARK -> REFINE loop and convergence-rate fitting
"""
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence

import numpy as np

from pdafem.core.exceptions import ValidationError
from pdafem.fem.mesh import MarkedSet, Triangulation, dorfler_mark, refine
from pdafem.fem.spaces import FeFunction, SpaceKind, prolong
from pdafem.problems.base import ConvexProblem, EstimatorReport, SolveResult
from pdafem.problems.plaplace import PLaplaceProblem
from pdafem.problems.registry import problem_registry
from pdafem.problems.rof import RofProblem
from pdafem.schemas.run import ConvergenceRecord, RunConfig
from pdafem.schemas.solver import AdmmConfig
from pdafem.services.export_service import export_service
from pdafem.services.reference_service import reference_service
from pdafem.solvers.admm import AdmmState
from pdafem.utils.logger import logger


MIN_RATE_RECORDS = 4
WEAK_DUALITY_TOL = 1e-10
RELIABILITY_TOL = 1e-8
ROF_OSC_CONSTANT = 10.0


@dataclass
class LevelResult:
    """Everything computed on one refinement level"""
    record: ConvergenceRecord
    mesh: Triangulation
    problem: ConvexProblem
    primal: SolveResult
    dual: SolveResult
    report: EstimatorReport
    marking_indicators: np.ndarray
    marked: Optional[MarkedSet] = None
    ubar: Optional[FeFunction] = None


def fitted_slope(ndofs: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(values) against log(ndofs)"""
    x = np.log(np.asarray(ndofs, dtype=np.float64))
    y = np.asarray(values, dtype=np.float64)
    if len(x) < 2 or len(x) != len(y):
        raise ValidationError("Rate fitting needs at least two matching points")
    if (y <= 0).any() or not np.isfinite(y).all():
        raise ValidationError("Rate fitting needs positive finite values")
    return float(np.polyfit(x, np.log(y), 1)[0])


class AfemService:
    """Service driving adaptive runs"""

    def __init__(self):
        self.registry = problem_registry

    def admm_config(self, tol: float) -> AdmmConfig:
        return AdmmConfig(tol=tol)

    def _prolong_state(self, state: Optional[AdmmState], mesh: Triangulation, problem: ConvexProblem) -> Optional[AdmmState]:
        if state is None:
            return None
        primary = prolong(state.primary, mesh)
        if primary.kind == SpaceKind.P1 and isinstance(problem, PLaplaceProblem):
            values = primary.values.copy()
            values[problem.dirichlet_nodes] = problem.dirichlet_values[problem.dirichlet_nodes]
            primary = primary.with_values(values)
        elif primary.kind == SpaceKind.P1 and isinstance(problem, RofProblem):
            values = primary.values.copy()
            values[problem.dirichlet_nodes] = 0.0
            primary = primary.with_values(values)
        elif primary.kind == SpaceKind.BDM:
            primary = FeFunction.from_values(problem.dual_space, primary.values)
        return AdmmState(
            primary=primary,
            auxiliary=prolong(state.auxiliary, mesh),
            multiplier=prolong(state.multiplier, mesh),
            tau=state.tau
        )

    def _solve_primal(self, config: RunConfig, problem: ConvexProblem, initial: Optional[AdmmState]) -> SolveResult:
        admm = self.admm_config(problem.primal_tolerance())
        if config.solver == "primal_dual" and isinstance(problem, RofProblem):
            return problem.solve_primal_dual(admm)
        return problem.solve_primal(admm, initial)

    def reference_energy(self, config: RunConfig, problem: ConvexProblem) -> Optional[float]:
        """Exact optimal energy when known, else a fine solve with this level's data"""
        if not config.reference_energy:
            return None
        if isinstance(problem, RofProblem) and problem.benchmark is not None and problem.benchmark.exact_energy:
            return problem.benchmark.exact_energy
        return reference_service.reference_energy(problem, problem.mesh.n_elements)

    def iterate(self, config: RunConfig) -> Iterator[LevelResult]:
        """
        Run the adaptive loop level by level.

        Args:
            config: Validated run configuration

        Yields:
            LevelResult for every level with at most ``config.max_dofs`` nodes
        """
        mesh = self.registry.initial_mesh(config)
        problem = self.registry.create(config, mesh)
        primal_state: Optional[AdmmState] = None
        dual_state: Optional[AdmmState] = None
        logger.info(
            f"Starting {config.refine_mode} run: {problem.name} on {config.benchmark}, "
            f"{mesh.n_elements} elements, max_dofs {config.max_dofs}"
        )

        for level in range(config.max_levels):
            if mesh.n_nodes > config.max_dofs:
                break

            e_ref = self.reference_energy(config, problem)
            primal = self._solve_primal(config, problem, primal_state)
            dual = problem.solve_dual(self.admm_config(problem.dual_tolerance()), dual_state)
            u, p = primal.solution, dual.solution
            converged = primal.converged and dual.converged
            if not converged:
                logger.warning(f"Level {level}: solver did not converge, recording flagged values")

            result = self._evaluate(config, level, problem, primal, dual, e_ref, converged)
            error = result.record.error
            logger.info(
                f"Level {level}: ndof {result.record.ndof}, eta {result.record.eta_pd:.6e}"
                + (f", error {error:.6e}" if error is not None else "")
            )

            if config.out_dir is not None and config.export_levels:
                export_service.export_level(config.out_dir, level, mesh, u, result.marking_indicators, result.ubar, p)

            if config.refine_mode == "adaptive":
                marked = dorfler_mark(result.marking_indicators, config.theta)
            else:
                marked = MarkedSet(indices=np.arange(mesh.n_elements))
            result.marked = marked
            yield result

            if marked.converged:
                logger.info(f"Level {level}: all indicators vanish, stopping")
                break

            mesh = refine(mesh, marked)
            problem = problem.on_mesh(mesh)
            primal_state = self._prolong_state(primal.state, mesh, problem)
            dual_state = self._prolong_state(dual.state, mesh, problem)

    def _evaluate(
        self,
        config: RunConfig,
        level: int,
        problem: ConvexProblem,
        primal: SolveResult,
        dual: SolveResult,
        e_ref: Optional[float],
        converged: bool
    ) -> LevelResult:
        mesh = problem.mesh
        u, p = primal.solution, dual.solution
        e_primal = problem.energy_primal(u)
        d_dual = problem.energy_dual(p)
        if e_primal - d_dual < -WEAK_DUALITY_TOL:
            logger.warning(f"Level {level}: weak duality violated, E - D = {e_primal - d_dual:.3e}")

        report = problem.estimator(u, p)
        if report.min_indicator_sq < -1e-12:
            logger.warning(f"Level {level}: negative indicator {report.min_indicator_sq:.3e}")
        marking = report.indicators
        eta_res = None
        p_norm = None
        ubar = ubar_error = jump = None

        if isinstance(problem, PLaplaceProblem):
            osc = problem.oscillation(p)
            p_norm = problem.dual_norm(p)
            if config.estimator in ("res", "both"):
                residual = problem.estimator_residual(u)
                eta_res = residual.eta
                if config.estimator == "res":
                    marking = residual.indicators
        else:
            osc = problem.oscillation()
            ubar = problem.ubar(p)
            ubar_error = problem.ubar_error(p)
            jump = problem.jump_diagnostic(ubar)

        error = problem.exact_error(u)
        self._check_reliability(level, problem, e_primal, report, error, osc, e_ref)

        record = ConvergenceRecord(
            level=level,
            ndof=mesh.n_nodes,
            hbar=mesh.hbar,
            E_primal=e_primal,
            D_dual=d_dual,
            eta_pd=report.eta,
            eta_res=eta_res,
            error=error,
            osc=osc,
            iters_primal=primal.iterations,
            iters_dual=dual.iterations,
            eta_com=min(report.eta, eta_res) if eta_res is not None else None,
            p_norm=p_norm,
            ubar_error=ubar_error,
            jump=jump,
            E_ref=e_ref,
            n_elements=mesh.n_elements,
            converged=converged
        )
        return LevelResult(record, mesh, problem, primal, dual, report, marking, ubar=ubar)

    def _check_reliability(
        self,
        level: int,
        problem: ConvexProblem,
        e_primal: float,
        report: EstimatorReport,
        error: Optional[float],
        osc: float,
        e_ref: Optional[float]
    ):
        """Log (never hide) violations of the computable error bounds"""
        if e_ref is not None and e_primal - e_ref > report.total_sq + RELIABILITY_TOL:
            logger.warning(
                f"Level {level}: E - E_ref = {e_primal - e_ref:.6e} exceeds eta^2 = {report.total_sq:.6e}"
            )
        if isinstance(problem, RofProblem) and error is not None:
            bound = report.total_sq + ROF_OSC_CONSTANT * osc
            if error ** 2 > bound:
                logger.warning(f"Level {level}: (alpha/2)||u - u_h||^2 = {error ** 2:.6e} exceeds {bound:.6e}")

    def run(self, config: RunConfig) -> List[ConvergenceRecord]:
        """
        Adaptive run; writes ``convergence.csv`` (and per-level files) when
        ``config.out_dir`` is set.

        Returns:
            Records of all levels
        """
        records = [result.record for result in self.iterate(config)]
        if config.out_dir is not None:
            export_service.write_csv(records, config.out_dir)
        return records

    def fit_rate(self, records: Sequence[ConvergenceRecord], field: str = "eta_pd") -> float:
        """
        Least-squares slope of log(field) against log(ndof) over the last
        half of the records.

        Args:
            records: At least four records
            field: ConvergenceRecord attribute

        Returns:
            Fitted rate
        """
        if len(records) < MIN_RATE_RECORDS:
            raise ValidationError(f"Rate fitting needs at least {MIN_RATE_RECORDS} records, got {len(records)}")
        if field not in ConvergenceRecord.CSV_FIELDS:
            raise ValidationError(f"Unknown record field '{field}'")
        tail = list(records)[len(records) // 2:]
        values = [r.get(field) for r in tail]
        if any(v is None for v in values):
            raise ValidationError(f"Field '{field}' is missing on some levels")
        return fitted_slope([r.ndof for r in tail], values)


# Create global AFEM service instance
afem_service = AfemService()

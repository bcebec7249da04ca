"""
ADMM Driver
Alternating direction method of multipliers with residual-balanced step sizes
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from pdafem.fem.spaces import FeFunction
from pdafem.schemas.solver import AdmmConfig
from pdafem.utils.logger import logger


@dataclass
class AdmmState:
    """Iterate (primary, auxiliary; multiplier) with its step size and history"""
    primary: FeFunction
    auxiliary: FeFunction
    multiplier: FeFunction
    tau: float
    residual_history: List[Tuple[float, float]] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("ADMM step size must be positive")

    @property
    def residuals(self) -> Tuple[float, float]:
        return self.residual_history[-1] if self.residual_history else (np.inf, np.inf)


class SaddleProblem(ABC):
    """
    Splitting min_x F(x) + G(y) subject to B x = y.

    The coupling is measured in a diagonal pairing (y, z)_W = sum W_i y_i z_i;
    the augmented Lagrangian is F(x) + G(y) + (lam, Bx - y)_W + tau/2 |Bx - y|_W^2.
    """

    name: str = "saddle"

    @abstractmethod
    def coupling(self, primary: FeFunction) -> np.ndarray:
        """B x in auxiliary coefficients"""
        pass

    @abstractmethod
    def update_primary(self, target: np.ndarray, tau: float) -> FeFunction:
        """argmin_x F(x) + tau/2 |B x - target|_W^2"""
        pass

    @abstractmethod
    def update_auxiliary(self, target: np.ndarray, tau: float) -> FeFunction:
        """argmin_y G(y) + tau/2 |y - target|_W^2"""
        pass

    @abstractmethod
    def pairing_weights(self) -> np.ndarray:
        """Diagonal W of the pairing, one entry per auxiliary coefficient"""
        pass

    def norm(self, values: np.ndarray) -> float:
        return float(np.sqrt(np.dot(self.pairing_weights(), values ** 2)))


def admm_run(
    problem: SaddleProblem,
    config: AdmmConfig,
    initial: AdmmState,
    callback: Optional[Callable[[AdmmState], None]] = None
) -> AdmmState:
    """
    Run ADMM from ``initial`` until max(primal, dual residual) <= tol.

    Residual balancing doubles tau when the primal residual exceeds ten
    times the dual one (and halves it in the opposite case), rescaling the
    scaled multiplier lam/tau inversely; at most one change per
    ``config.balance_every`` iterations.

    Returns:
        The final state, or the best state seen flagged non-converged
    """
    tau = float(initial.tau)
    x = initial.primary
    y = initial.auxiliary
    scaled = initial.multiplier.coefficients / tau
    history = list(initial.residual_history)
    last_change = 0

    best: Optional[AdmmState] = None
    best_score = np.inf
    state = initial

    for it in range(1, config.max_iters + 1):
        x = problem.update_primary(y.coefficients - scaled, tau)
        bx = problem.coupling(x)
        y_old = y.coefficients
        y = problem.update_auxiliary(bx + scaled, tau)
        gap = bx - y.coefficients
        scaled = scaled + gap

        primal = problem.norm(gap)
        dual = tau * problem.norm(y.coefficients - y_old)
        history.append((primal, dual))

        state = AdmmState(
            primary=x,
            auxiliary=y,
            multiplier=y.with_values(tau * scaled),
            tau=tau,
            residual_history=history,
            iterations=initial.iterations + it,
            converged=False
        )
        if callback is not None:
            callback(state)

        score = max(primal, dual)
        if score < best_score:
            best_score = score
            best = state

        if it % 100 == 0:
            logger.debug(f"{problem.name}: iteration {it}, primal {primal:.3e}, dual {dual:.3e}, tau {tau:.3g}")

        if score <= config.tol:
            state.converged = True
            logger.info(f"{problem.name}: converged after {it} iterations (residual {score:.3e})")
            return state

        if config.adapt == "residual_balance" and it - last_change >= config.balance_every:
            factor = 1.0
            if primal > config.balance_ratio * dual:
                factor = config.balance_factor
            elif dual > config.balance_ratio * primal:
                factor = 1.0 / config.balance_factor
            if factor != 1.0:
                tau *= factor
                scaled /= factor
                last_change = it
                logger.debug(f"{problem.name}: tau -> {tau:.3g} at iteration {it}")

    logger.warning(
        f"{problem.name}: no convergence in {config.max_iters} iterations "
        f"(best residual {best_score:.3e}, tol {config.tol:.3e})"
    )
    result = best if best is not None else state
    return replace(
        result,
        residual_history=history,
        iterations=initial.iterations + config.max_iters,
        converged=False
    )

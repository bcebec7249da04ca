"""
Equality-Constrained Quadratic Programs
Direct sparse factorization of the KKT system, factored once and reused
"""
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse import linalg

from pdafem.core.exceptions import SolverError
from pdafem.utils.logger import logger


KKT_RESIDUAL_TOL = 1e-10
RANK_TOL = 1e-10


def redundant_rows(C: sp.spmatrix, tol: float = RANK_TOL) -> np.ndarray:
    """
    Indices of rows of C that are linear combinations of the others
    (column-pivoted QR of C^T).
    """
    if C.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    _, R, piv = scipy.linalg.qr(C.T.toarray(), mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > tol * max(diag[0], 1.0)).sum()) if diag.size else 0
    return np.sort(piv[rank:]).astype(np.int64)


class EqualityConstrainedQP:
    """
    min 1/2 x.H x - b.x  subject to  C x = d.

    The KKT matrix [[H, C^T], [C, 0]] is factored on construction; ``solve``
    only performs triangular solves. Redundant constraint rows are detected
    when the factorization fails and dropped with a warning.
    """

    def __init__(self, H: sp.spmatrix, C: Optional[sp.spmatrix] = None, name: str = "kkt"):
        self.name = name
        self.H = sp.csc_matrix(H)
        self.n = self.H.shape[0]
        if C is None:
            C = sp.csr_matrix((0, self.n))
        self.C = sp.csr_matrix(C)
        if self.C.shape[1] != self.n:
            raise SolverError(f"{name}: constraint map has {self.C.shape[1]} columns, expected {self.n}")
        self.kept = np.arange(self.C.shape[0])
        self._factorize()

    def _kkt_matrix(self) -> sp.csc_matrix:
        C = self.C[self.kept]
        if C.shape[0] == 0:
            return self.H
        return sp.csc_matrix(sp.bmat([[self.H, C.T], [C, None]]))

    def _factorize(self):
        try:
            self._lu = linalg.splu(self._kkt_matrix())
            self._check_factorization()
            return
        except (RuntimeError, SolverError) as e:
            if self.C.shape[0] == 0:
                raise SolverError(f"{self.name}: singular system ({e})")
            logger.debug(f"{self.name}: factorization failed ({e}), checking constraint rank")

        dropped = redundant_rows(self.C)
        if dropped.size == 0:
            raise SolverError(f"{self.name}: singular KKT system with full-rank constraints")
        logger.warning(f"{self.name}: dropping {dropped.size} redundant constraint rows")
        self.kept = np.setdiff1d(np.arange(self.C.shape[0]), dropped)
        try:
            self._lu = linalg.splu(self._kkt_matrix())
            self._check_factorization()
        except RuntimeError as e:
            raise SolverError(f"{self.name}: singular KKT system ({e})")

    def _check_factorization(self):
        """Reject numerically singular factorizations"""
        rng = np.random.default_rng(0)
        size = self.n + len(self.kept)
        rhs = rng.standard_normal(size)
        sol = self._lu.solve(rhs)
        residual = self._kkt_matrix() @ sol - rhs
        if not np.isfinite(sol).all() or np.linalg.norm(residual) > 1e-6 * np.linalg.norm(rhs):
            raise SolverError(f"{self.name}: numerically singular KKT matrix")

    def solve(self, b: np.ndarray, d: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        Args:
            b: Linear term
            d: Constraint right-hand side (zero when omitted)

        Returns:
            Minimizer x and multipliers lam with H x + C^T lam = b
        """
        b = np.asarray(b, dtype=np.float64)
        d = np.zeros(self.C.shape[0]) if d is None else np.asarray(d, dtype=np.float64)
        sol = self._lu.solve(np.concatenate([b, d[self.kept]]))
        x = sol[:self.n]
        multipliers = np.zeros(self.C.shape[0])
        multipliers[self.kept] = sol[self.n:]

        if self.C.shape[0]:
            violation = np.abs(self.C @ x - d).max()
            scale = max(1.0, np.abs(d).max(), np.abs(b).max())
            if violation > 1e-8 * scale:
                raise SolverError(f"{self.name}: inconsistent constraints (violation {violation:.3e})")
        return x, multipliers


def solve_equality_constrained_quadratic(
    H: sp.spmatrix,
    b: np.ndarray,
    C: Optional[sp.spmatrix] = None,
    d: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    One-shot solve of min 1/2 x.H x - b.x subject to C x = d.

    Returns:
        Tuple of (x, lagrange multipliers)
    """
    return EqualityConstrainedQP(H, C).solve(b, d)

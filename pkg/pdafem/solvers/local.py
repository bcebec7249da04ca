"""
Local Solvers
Closed-form and one-dimensional proximal maps applied per element or per node
"""
from typing import Union

import numpy as np

from pdafem.core.exceptions import SolverError


ArrayLike = Union[float, np.ndarray]

PROX_TOL = 1e-12
PROX_MAX_STEPS = 100


def _norms(z: np.ndarray) -> np.ndarray:
    return np.linalg.norm(z, axis=-1)


def shrink(z: np.ndarray, kappa: ArrayLike) -> np.ndarray:
    """
    Minimizer of |r| + 1/(2 kappa) |r - z|^2, i.e. max(0, 1 - kappa/|z|) z.

    Args:
        z: Vectors of shape (..., 2)
        kappa: Nonnegative threshold, scalar or broadcastable to z.shape[:-1]

    Returns:
        Array of the shape of z
    """
    z = np.asarray(z, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.float64)
    if (kappa < 0).any():
        raise SolverError("Shrinkage threshold must be nonnegative")
    norm = _norms(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norm > kappa, 1.0 - kappa / norm, 0.0)
    return factor[..., None] * z


def project_ball(z: np.ndarray) -> np.ndarray:
    """Projection onto the closed unit ball, vectorized over (..., 2)"""
    z = np.asarray(z, dtype=np.float64)
    norm = _norms(z)
    return z / np.maximum(norm, 1.0)[..., None]


def prox_power(z: np.ndarray, sigma: float, weight: ArrayLike, tau: ArrayLike) -> np.ndarray:
    """
    Minimizer of (1/sigma)|r|^sigma + w tau (|r|^2/2 - r.z).

    The minimizer is rho z/|z| where rho >= 0 is the root of
    rho^(sigma-1) + w tau rho = w tau |z|, found by safeguarded Newton.

    Args:
        z: Vectors of shape (..., 2)
        sigma: Exponent > 1
        weight: Positive weight, scalar or per vector
        tau: Positive step size, scalar or per vector

    Returns:
        Array of the shape of z
    """
    if sigma <= 1.0:
        raise SolverError(f"prox_power needs sigma > 1, got {sigma}")
    z = np.asarray(z, dtype=np.float64)
    norm = _norms(z)
    c = np.broadcast_to(np.asarray(weight, dtype=np.float64) * np.asarray(tau, dtype=np.float64), norm.shape)
    if (c <= 0).any():
        raise SolverError("prox_power needs positive weight and step size")

    active = norm > 0
    rho = np.zeros_like(norm)
    if not active.any():
        return np.zeros_like(z)

    a = norm[active]
    ca = c[active]
    target = ca * a
    lo = np.zeros_like(a)
    hi = a.copy()
    # exact for sigma = 2
    r = np.clip(target / (1.0 + ca), 0.0, a)

    for _ in range(PROX_MAX_STEPS):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            phi = r ** (sigma - 1.0) + ca * r - target
            dphi = (sigma - 1.0) * r ** (sigma - 2.0) + ca
        lo = np.where(phi < 0, r, lo)
        hi = np.where(phi > 0, r, hi)
        done = (np.abs(phi) <= PROX_TOL * np.maximum(1.0, target)) | (hi - lo <= PROX_TOL * a)
        if done.all():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = r - phi / dphi
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        r = np.where(done, r, np.where(inside, newton, 0.5 * (lo + hi)))
    else:
        raise SolverError(f"prox_power did not converge in {PROX_MAX_STEPS} steps")

    rho[active] = r
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(active, rho / np.where(active, norm, 1.0), 0.0)
    return scale[..., None] * z

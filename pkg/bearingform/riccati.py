"""
Continuous Riccati equation helpers shared by the centralized and the edge observers.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from bearingform.exceptions import ConditioningError, ConfigurationError

log = logging.getLogger(__file__)

MIN_EIGENVALUE = 1e-10
SYMMETRY_TOL = 1e-9
# RK4 on the real axis is stable for |h * lambda| up to about 2.78
RK4_STABILITY = 2.5


def double_integrator(dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """A = [[0, I], [0, 0]] and B = [0; I] for a stacked position/velocity state of size 2 * dim."""
    A = np.zeros((2 * dim, 2 * dim))
    A[:dim, dim:] = np.eye(dim)
    B = np.vstack([np.zeros((dim, dim)), np.eye(dim)])
    return A, B


def as_matrix(value, dim: int, name: str = "matrix") -> np.ndarray:
    """Scalars mean scalar * I; explicit matrices must be dim x dim and symmetric positive definite."""
    if np.isscalar(value):
        if value <= 0:
            raise ConfigurationError(f"{name} must be positive, got {value}")
        return float(value) * np.eye(dim)
    M = np.asarray(value, dtype=float)
    if M.shape != (dim, dim):
        raise ConfigurationError(f"{name} must be {dim}x{dim}, got {M.shape}")
    if not np.allclose(M, M.T, atol=SYMMETRY_TOL):
        raise ConfigurationError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise ConfigurationError(f"{name} must be positive definite")
    return M


def cre_rate(
    M: np.ndarray, A: np.ndarray, C: np.ndarray, Q: np.ndarray, S: np.ndarray
) -> np.ndarray:
    """dM/dt = A M + M A^T - M C^T Q C M + S."""
    MC = M @ C.T
    return A @ M + M @ A.T - MC @ Q @ MC.T + S


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def min_eigenvalue(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(M)[..., 0].min())


def check_conditioning(
    M: np.ndarray, t: Optional[float] = None, what: str = "M"
) -> float:
    lam = min_eigenvalue(M)
    if not np.isfinite(lam) or lam < MIN_EIGENVALUE:
        raise ConditioningError(
            f"Riccati matrix {what} lost positive definiteness (lambda_min={lam:.3g})", t
        )
    return lam


def gain_rate(kappa: float, M: np.ndarray, Q: np.ndarray, C: np.ndarray) -> float:
    """
    Upper bound on the fastest rate injected by K C = kappa M C^T Q C and by the quadratic CRE term. Both share
    their nonzero spectrum with Q C M C^T.
    """
    return max(kappa, 2.0) * np.linalg.norm(Q @ C @ M @ C.T, 2)


def stable_substeps(rate: float, dt: float) -> int:
    """Number of equal RK4 substeps keeping dt * rate inside the stability interval."""
    if not np.isfinite(rate) or rate <= 0:
        return 1
    return max(1, int(np.ceil(dt * rate / RK4_STABILITY)))


def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def observability_gramian(
    A: np.ndarray, C_samples: Sequence[np.ndarray], dt: float
) -> np.ndarray:
    """Trapezoid approximation of the integral of Phi^T C^T C Phi with Phi = exp(A tau)."""
    step = expm(A * dt)
    Phi = np.eye(A.shape[0])
    terms = []
    for C in C_samples:
        CPhi = C @ Phi
        terms.append(CPhi.T @ CPhi)
        Phi = step @ Phi
    terms = np.array(terms)
    return dt * (terms.sum(axis=0) - 0.5 * (terms[0] + terms[-1]))

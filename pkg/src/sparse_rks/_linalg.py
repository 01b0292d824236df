"""Small dense linear-algebra helpers built on scipy.linalg."""
from __future__ import annotations

import numpy as np
from scipy import linalg


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def spd_solve(S: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve S X = rhs for symmetric positive definite S via Cholesky."""
    factor = linalg.cho_factor(S, lower=True, check_finite=False)
    return linalg.cho_solve(factor, rhs, check_finite=False)


def right_spd_solve(lhs: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Return lhs @ inv(S) for symmetric positive definite S."""
    return spd_solve(S, lhs.T).T


def spd_inverse(S: np.ndarray) -> np.ndarray:
    return symmetrize(spd_solve(S, np.eye(S.shape[0])))


def spd_logdet(S: np.ndarray) -> float:
    L = linalg.cholesky(S, lower=True, check_finite=False)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def is_psd(P: np.ndarray, rel_tol: float = 1e-8) -> bool:
    """True when P is symmetric and its eigenvalues are >= -rel_tol * ||P||."""
    scale = max(np.linalg.norm(P, 2), 1e-300)
    if np.abs(P - P.T).max() > rel_tol * scale:
        return False
    return bool(np.linalg.eigvalsh(symmetrize(P)).min() >= -rel_tol * scale)


def block_diag(*mats) -> np.ndarray:
    return linalg.block_diag(*mats)

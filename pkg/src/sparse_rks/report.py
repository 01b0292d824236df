"""Common result type returned by every estimator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFinite


@dataclass
class SolverReport:
    """Estimates plus an iteration trace.

    Attributes
    ----------
    x : ndarray, shape (K, n)
        Smoothed state estimates.
    u : ndarray, shape (K, m) or (K-1, m)
        Input estimates (state-only estimators cannot see the last input).
    iterations : int
        Outer iterations performed.
    converged : bool
        Whether the stopping rule fired before the iteration cap.
    trace : dict
        Per-iteration lists such as objective values, log-likelihoods and
        parameter changes.
    runtime_s : float
        Wall time of the solve.
    extra : dict
        Estimator-specific outputs (learned hyperparameters, covariances).
    """

    x: np.ndarray
    u: np.ndarray
    iterations: int = 0
    converged: bool = False
    trace: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def record(self, **values) -> None:
        for key, val in values.items():
            self.trace.setdefault(key, []).append(val)


def ensure_finite(*arrays, where: str = "") -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFinite(f"non-finite values in {where or 'iterate'}")

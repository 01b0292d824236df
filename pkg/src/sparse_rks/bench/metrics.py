"""Accuracy metrics for state and sparse-input estimates."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch, ZeroReference

SUPPORT_THRESHOLD = 0.8


def _pair(truth, estimate):
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise DimensionMismatch(f"shapes differ: {truth.shape} vs {estimate.shape}")
    return truth, estimate


def nmse(truth, estimate) -> float:
    """Pooled normalized squared error sum_k ||truth_k - est_k||^2 / sum_k ||truth_k||^2."""
    truth, estimate = _pair(truth, estimate)
    energy = float(np.sum(truth ** 2))
    if energy == 0.0:
        raise ZeroReference("reference sequence has zero energy")
    return float(np.sum((truth - estimate) ** 2)) / energy


def to_db(ratio: float) -> float:
    """10 log10(ratio); -inf for an exact zero."""
    if ratio == 0.0:
        return float("-inf")
    return float(10.0 * np.log10(ratio))


def nmse_db(truth, estimate) -> float:
    return to_db(nmse(truth, estimate))


def support_indicator(u, threshold: float) -> np.ndarray:
    """Boolean array marking entries with magnitude strictly above ``threshold``."""
    return np.abs(np.asarray(u, dtype=float)) > threshold


def supports_to_indicator(supports, m: int) -> np.ndarray:
    """(K, m) boolean indicator from a sequence of index sets."""
    out = np.zeros((len(supports), m), dtype=bool)
    for k, idx in enumerate(supports):
        out[k, list(idx)] = True
    return out


def fsrr(true_u, est_u, sigma_u: float, true_supports=None) -> float:
    """False support recovery rate.

    Per step, the Hamming distance between the true support indicator and
    the indicator of |est| > 0.8 sigma_u, divided by m; averaged over steps.
    The true support comes from ``true_supports`` when given, otherwise from
    the nonzeros of ``true_u``.
    """
    if sigma_u <= 0:
        raise ValueError("sigma_u must be positive")
    true_u, est_u = _pair(np.atleast_2d(true_u), np.atleast_2d(est_u))
    if true_supports is None:
        truth = true_u != 0
    else:
        truth = supports_to_indicator(true_supports, true_u.shape[1])[:true_u.shape[0]]
    estimated = support_indicator(est_u, SUPPORT_THRESHOLD * sigma_u)
    return float(np.mean(np.sum(truth != estimated, axis=1) / true_u.shape[1]))


def support_recovered(true_u, est_u, tol: float) -> bool:
    """True when {|est| > tol} equals the set of nonzeros of ``true_u`` at every step."""
    true_u, est_u = _pair(np.atleast_2d(true_u), np.atleast_2d(est_u))
    return bool(np.array_equal(true_u != 0, support_indicator(est_u, tol)))

"""Regularized smoothers for sparse inputs.

All estimators here solve their subproblems with :func:`rks_smooth` on an
augmented measurement model in which the input is observed a second time
through a pseudo-measurement:

    [y_k      ]   [C]       [D]
    [pseudo_k ] = [0] x_k + [I] u_k + noise,   noise ~ N(0, blkdiag(R_k, R_pseudo))

The stacked feedthrough [D; I] always has full column rank, so the
recursion applies for any number of measurements.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import LdsModel
from .report import SolverReport, ensure_finite
from ._linalg import right_spd_solve
from .rks import rks_cost, rks_smooth

WEIGHT_FLOOR = 1e-8
EARLY_EXIT_REL = 1e-7
TAU_MULTIPLIERS = (0.1, 1.0, 10.0, 100.0)


def soft_threshold(a, b):
    """Entry-wise shrinkage sign(a) * max(|a| - b, 0)."""
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("threshold must be nonnegative")
    a = np.asarray(a, dtype=float)
    return np.sign(a) * np.maximum(np.abs(a) - b, 0.0)


def group_soft_threshold(v, b: float):
    """Shrink the Euclidean norm of ``v`` by ``b``, keeping its direction."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= b or norm == 0.0:
        return np.zeros_like(v)
    return v * (1.0 - b / norm)


def weight_matrix(u_prev, l: float = 1.0, epsilon_w: float = WEIGHT_FLOOR) -> np.ndarray:
    """Diagonal weights max(|u_prev|, epsilon_w)^(2 - l)."""
    if not 0 < l < 2:
        raise ValueError("exponent l must lie in (0, 2)")
    mags = np.maximum(np.abs(np.asarray(u_prev, dtype=float)), epsilon_w)
    return np.diag(mags ** (2.0 - l))


def tau_grid(sigma_v: float, m: int) -> list[float]:
    """Candidate regularization weights scaled by the universal threshold."""
    base = sigma_v * np.sqrt(2.0 * np.log(max(m, 2)))
    return [mult * base for mult in TAU_MULTIPLIERS]


@dataclass
class AdmmState:
    """Splitting variables of the l1 / group-l1 iteration."""

    t: np.ndarray
    lam: np.ndarray
    c: float
    tau: np.ndarray
    r: int = 0
    primal_residuals: list = field(default_factory=list)
    dual_residuals: list = field(default_factory=list)

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("penalty c must be positive")
        if np.any(np.asarray(self.tau) < 0):
            raise ValueError("tau must be nonnegative")


@dataclass
class ReweightState:
    """Weights of the majorize-minimize iteration for sum |u|^l."""

    u_prev: np.ndarray
    l: float = 1.0
    epsilon_w: float = WEIGHT_FLOOR

    def weights(self) -> np.ndarray:
        """(K, m) array with the diagonals of W_k."""
        return np.maximum(np.abs(self.u_prev), self.epsilon_w) ** (2.0 - self.l)


def _per_step(value, K: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(K, float(arr))
    if arr.shape != (K,):
        raise ValueError(f"per-step parameter must be scalar or length {K}")
    return arr.copy()


def augmented_model(model: LdsModel, pseudo_covs) -> LdsModel:
    """Model with the input observed again through an identity block.

    ``pseudo_covs`` is one (m, m) covariance or a list of K of them.
    """
    n, m, p, K = model.n, model.m, model.p, model.K
    pseudo = np.asarray(pseudo_covs, dtype=float)
    if pseudo.ndim == 2:
        pseudo = pseudo[None]
    steps = max(pseudo.shape[0], model.C.shape[0], model.D.shape[0], model.R.shape[0])
    C, D, R = [], [], []
    for k in range(steps if steps > 1 else 1):
        kk = min(k, K - 1)
        C.append(np.vstack([model.C_at(kk), np.zeros((m, n))]))
        D.append(np.vstack([model.D_at(kk), np.eye(m)]))
        R_k = np.zeros((p + m, p + m))
        R_k[:p, :p] = model.R_at(kk)
        R_k[p:, p:] = pseudo[k if pseudo.shape[0] > 1 else 0]
        R.append(R_k)
    if steps == 1:
        C, D, R = C[0], D[0], R[0]
    return model.replace(C=C, D=D, R=R)


def _early_exit_tol(sigma_u: float) -> float:
    return EARLY_EXIT_REL * sigma_u


def _admm(model, measurements, tau, c, r_max, sigma_u, group: bool) -> SolverReport:
    start = time.perf_counter()
    y = model.check_measurements(measurements)
    K, m = model.K, model.m
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    tau_k = _per_step(tau, K)
    if group and np.ptp(tau_k) > 0:
        raise ValueError("group shrinkage takes a single tau")
    state = AdmmState(t=np.zeros((K, m)), lam=np.zeros((K, m)), c=float(c), tau=tau_k)
    aug = augmented_model(model, np.eye(m) / state.c)
    report = SolverReport(x=np.zeros((K, model.n)), u=np.zeros((K, m)))
    u_prev = None
    tol = _early_exit_tol(sigma_u)
    for r in range(1, r_max + 1):
        y_aug = np.hstack([y, state.t - state.lam / state.c])
        result = rks_smooth(aug, y_aug)
        u = result.u
        v = u + state.lam / state.c
        if group:
            t_new = np.zeros_like(v)
            for i in range(m):
                t_new[:, i] = group_soft_threshold(v[:, i], tau_k[0] / state.c)
        else:
            t_new = soft_threshold(v, tau_k[:, None] / state.c)
        state.lam = state.lam + state.c * (u - t_new)
        ensure_finite(u, t_new, state.lam, where="ADMM iterate")
        state.primal_residuals.append(float(np.linalg.norm(u - t_new)))
        state.dual_residuals.append(float(state.c * np.linalg.norm(t_new - state.t)))
        state.t = t_new
        state.r = r
        change = np.inf if u_prev is None else float(np.abs(u - u_prev).max())
        report.record(primal=state.primal_residuals[-1], dual=state.dual_residuals[-1],
                      delta_u=change)
        report.x, report.u = result.x, u
        u_prev = u
        if change < tol:
            report.converged = True
            break
    report.iterations = state.r
    report.extra["admm"] = state
    report.extra["tau"] = tau_k
    report.runtime_s = time.perf_counter() - start
    return report


def l1_rks(model: LdsModel, measurements, tau, c: float = 1.0, r_max: int = 200,
           sigma_u: float = 1.0) -> SolverReport:
    """l1-regularized smoother via ADMM.

    Each iteration smooths the augmented model with pseudo-measurement
    t_k - lambda_k / c and pseudo-noise covariance I / c, then updates
    t = S_{tau/c}(u + lambda/c) and lambda <- lambda + c (u - t).

    At a fixed point t = u and -grad f(x, u) = 2 lambda with
    lambda in tau * subdiff ||u||_1, where f is the smoothing cost of
    :func:`rks_cost`; the iteration therefore minimizes
    f + 2 tau * sum_k ||u_k||_1.

    Stops after ``r_max`` iterations or when the largest input change falls
    below 1e-7 * ``sigma_u``.
    """
    return _admm(model, measurements, tau, c, r_max, sigma_u, group=False)


def group_l1_rks(model: LdsModel, measurements, tau: float, c: float = 1.0, r_max: int = 200,
                 sigma_u: float = 1.0) -> SolverReport:
    """Group-l1 variant of :func:`l1_rks` for inputs with a common support.

    The shrinkage acts on each input coordinate's trajectory
    (u_1(i), ..., u_K(i)) as a whole, so entire rows are switched off.
    """
    return _admm(model, measurements, tau, c, r_max, sigma_u, group=True)


def reweighted_l2_rks(model: LdsModel, measurements, tau, l: float = 1.0, r_max: int = 50,
                      sigma_u: float = 1.0, epsilon_w: float = WEIGHT_FLOOR) -> SolverReport:
    """Majorize-minimize smoother for the penalty tau * sum |u|^l.

    Each iteration replaces |u|^l by its quadratic upper bound at the
    previous iterate, which turns the penalty into a Gaussian
    pseudo-measurement 0 = u_k + noise with covariance (2 / (tau l)) W_k.
    The trace records the true objective (``objective``) and the value of
    the bound at the new iterate (``majorizer``); both are non-increasing.
    """
    start = time.perf_counter()
    y = model.check_measurements(measurements)
    K, m = model.K, model.m
    if not 0 < l < 2:
        raise ValueError("exponent l must lie in (0, 2)")
    tau_k = _per_step(tau, K)
    if np.any(tau_k <= 0):
        raise ValueError("tau must be positive")
    state = ReweightState(u_prev=np.ones((K, m)), l=l, epsilon_w=epsilon_w)
    y_aug = np.hstack([y, np.zeros((K, m))])
    # with the pseudo-measurement of u, the weighted left inverse of [D; I] is
    # (D^T R^-1 D + V^-1)^-1 [D^T R^-1, V^-1] for the diagonal pseudo-noise V
    DtRinv = [right_spd_solve(model.D_at(k).T, model.R_at(k)) for k in range(K)]
    DtRinvD = [DtRinv[k] @ model.D_at(k) for k in range(K)]
    report = SolverReport(x=np.zeros((K, model.n)), u=np.zeros((K, m)))
    tol = _early_exit_tol(sigma_u)
    for r in range(1, r_max + 1):
        weights = state.weights()
        pseudo_var = 2.0 / (tau_k[:, None] * l) * weights
        inverses = [np.linalg.solve(DtRinvD[k] + np.diag(1.0 / pseudo_var[k]),
                                    np.hstack([DtRinv[k], np.diag(1.0 / pseudo_var[k])]))
                    for k in range(K)]
        result = rks_smooth(augmented_model(model, [np.diag(v) for v in pseudo_var]), y_aug,
                            feedthrough_inverses=inverses)
        u = result.u
        ensure_finite(u, where="reweighted iterate")
        data_cost = rks_cost(model, y, result.x, u)
        penalty = float(np.sum(tau_k[:, None] * np.abs(u) ** l))
        expansion = np.maximum(np.abs(state.u_prev), epsilon_w)
        bound = float(np.sum(tau_k[:, None] * (0.5 * l * u ** 2 / weights
                                               + (1 - 0.5 * l) * expansion ** l)))
        change = float(np.abs(u - state.u_prev).max())
        report.record(objective=data_cost + penalty, majorizer=data_cost + bound, delta_u=change)
        report.x, report.u = result.x, u
        state.u_prev = u
        report.iterations = r
        if change < tol:
            report.converged = True
            break
    report.extra["reweight"] = state
    report.extra["tau"] = tau_k
    report.runtime_s = time.perf_counter() - start
    return report


def ridge_rks(model: LdsModel, measurements, ridge: float = 1e-6) -> SolverReport:
    """Baseline smoother with a small ridge penalty ridge * ||u_k||^2.

    Without the ridge the input is not identifiable when there are fewer
    measurements than inputs; with a tiny ridge this is the minimum-norm
    version of the unregularized smoother.
    """
    start = time.perf_counter()
    y = model.check_measurements(measurements)
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    aug = augmented_model(model, np.eye(model.m) / ridge)
    result = rks_smooth(aug, np.hstack([y, np.zeros((model.K, model.m))]))
    report = SolverReport(x=result.x, u=result.u, iterations=1, converged=True)
    report.extra["smoothing"] = result
    report.runtime_s = time.perf_counter() - start
    return report

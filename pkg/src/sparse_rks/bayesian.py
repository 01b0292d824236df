"""Hierarchical-prior smoothers for sparse inputs.

* :func:`sbl_rks` / :func:`msbl_rks`: sparse Bayesian learning by EM. The
  E-step is a Kalman smoother on the joint vector xi_k = [x_k; u_k] with
  u_k ~ N(0, diag(gamma_k)); the M-step sets gamma to the posterior second
  moments of u.
* :func:`vb_rks` / :func:`mvb_rks`: mean-field variational Bayes with a
  Gamma prior on the input precisions.
* :func:`sbl_rks_state_meas`: SBL when the measurements only see the state.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from ._linalg import right_spd_solve, spd_inverse, spd_logdet, spd_solve, symmetrize
from .errors import CovarianceBlowup
from .model import LdsModel
from .report import SolverReport, ensure_finite
from .rks import SmoothingResult, initial_joint_covariance, state_only_pass

GAMMA_FLOOR = 1e-10
BETA_CEILING = 1e12
BLOWUP_NORM = 1e12


@dataclass
class SblHyperparams:
    """Prior variances of the inputs and the EM log-likelihood trace."""

    gamma: np.ndarray      # (K, m); identical rows in joint mode
    r: int = 0
    loglik: list | None = None

    def __post_init__(self):
        if self.loglik is None:
            self.loglik = []

    def Gamma(self, k: int) -> np.ndarray:
        return np.diag(self.gamma[k])


@dataclass(frozen=True)
class AugmentedModel:
    """Joint-vector model xi_{k+1} = A_bar xi_k + z_k, y_k = C_bar xi_k + v_k."""

    A_bar: np.ndarray
    C_bar: np.ndarray
    Q_bar: np.ndarray

    @classmethod
    def transition(cls, model: LdsModel, src: int, dest: int, gamma_dest,
                   process_cov=None) -> "AugmentedModel":
        """Blocks for the move from step ``src`` to step ``dest`` (0-based).

        ``gamma_dest`` holds the prior variances of u at ``dest``;
        ``process_cov`` overrides Q of the source step (used for the
        transition into the first step).
        """
        n, m = model.n, model.m
        A_bar = np.zeros((n + m, n + m))
        A_bar[:n, :n] = model.A_at(src)
        A_bar[:n, n:] = model.B_at(src)
        C_bar = np.hstack([model.C_at(dest), model.D_at(dest)])
        Q_bar = np.zeros((n + m, n + m))
        Q_bar[:n, :n] = model.Q_at(src) if process_cov is None else process_cov
        Q_bar[n:, n:] = np.diag(gamma_dest)
        return cls(A_bar=A_bar, C_bar=C_bar, Q_bar=Q_bar)


def sbl_mstep(u_hat, P_u, gamma_floor: float = GAMMA_FLOOR) -> np.ndarray:
    """Posterior second moments u_hat^2 + diag(P_u), floored."""
    u_hat = np.asarray(u_hat, dtype=float)
    return np.maximum(u_hat ** 2 + np.diag(np.atleast_2d(P_u)), gamma_floor)


def sbl_estep(model: LdsModel, measurements, gamma, P0=None) -> SmoothingResult:
    """Kalman filter and RTS smoother on the joint vector with fixed gamma.

    The recursion starts from xi_0 = 0 with covariance ``P0`` (identity by
    default) and no process noise on the first state, as in
    :func:`~sparse_rks.rks.rks_smooth`; u_1 has prior variances gamma_1.
    Returns the smoothed moments, the lag-one covariances and the log
    marginal likelihood of the measurements.
    """
    y = model.check_measurements(measurements)
    n, m, K = model.n, model.m, model.K
    d = n + m
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (K, m))
    xi = np.zeros(d)
    P = initial_joint_covariance(n, m, P0)
    xi_f, P_f = np.zeros((K, d)), np.zeros((K, d, d))
    xi_p, P_p = np.zeros((K, d)), np.zeros((K, d, d))
    innov_norms = np.zeros(K)
    loglik = 0.0
    I_d = np.eye(d)
    for k in range(K):
        if k == 0:
            aug = AugmentedModel.transition(model, 0, 0, gamma[0], process_cov=np.zeros((n, n)))
        else:
            aug = AugmentedModel.transition(model, k - 1, k, gamma[k])
        C_bar = aug.C_bar
        xi_p[k] = aug.A_bar @ xi
        P_p[k] = symmetrize(aug.A_bar @ P @ aug.A_bar.T + aug.Q_bar)
        R = model.R_at(k)
        S = symmetrize(C_bar @ P_p[k] @ C_bar.T + R)
        G = right_spd_solve(P_p[k] @ C_bar.T, S)
        innov = y[k] - C_bar @ xi_p[k]
        innov_norms[k] = np.linalg.norm(innov)
        xi = xi_p[k] + G @ innov
        IG = I_d - G @ C_bar
        P = symmetrize(IG @ P_p[k] @ IG.T + G @ R @ G.T)
        # the trace bounds the spectral norm of a PSD matrix and is far cheaper
        if np.trace(P) > BLOWUP_NORM:
            raise CovarianceBlowup(f"filtered covariance trace exceeds {BLOWUP_NORM:g} at step {k + 1}")
        loglik -= 0.5 * (innov @ spd_solve(S, innov) + spd_logdet(S) + len(innov) * np.log(2 * np.pi))
        xi_f[k], P_f[k] = xi, P

    xi_s, P_s = xi_f.copy(), P_f.copy()
    P_lag = np.zeros((max(K - 1, 0), d, d))
    for k in range(K - 2, -1, -1):
        A_bar = AugmentedModel.transition(model, k, k + 1, gamma[k + 1]).A_bar
        # the predicted covariance is block diagonal, so the gain only needs
        # the state block; this avoids inverting tiny gamma entries
        gain = np.zeros((d, d))
        gain[:, :n] = right_spd_solve(P_f[k] @ A_bar[:n].T, P_p[k + 1][:n, :n])
        xi_s[k] = xi_f[k] + gain @ (xi_s[k + 1] - xi_p[k + 1])
        P_s[k] = symmetrize(P_f[k] + gain @ (P_s[k + 1] - P_p[k + 1]) @ gain.T)
        P_lag[k] = P_s[k + 1] @ gain.T
    return SmoothingResult(xi=xi_s, P=P_s, n=n, layout="direct", P_lag=P_lag,
                           xi_filt=xi_f, P_filt=P_f, innovation_norms=innov_norms, loglik=loglik)


def _em_loop(estep, K, m, r_max, eps_thres, joint, gamma_floor, first_row_fixed=False):
    if r_max < 1:
        raise ValueError("r_max must be at least 1")
    start = time.perf_counter()
    hyper = SblHyperparams(gamma=np.ones((K, m)))
    result = None
    report = SolverReport(x=np.zeros((0,)), u=np.zeros((0,)))
    for r in range(1, r_max + 1):
        result = estep(hyper.gamma)
        ensure_finite(result.xi, result.P, where="E-step")
        u_moments = result.xi[:, result.n:] ** 2 + np.diagonal(result.P[:, result.n:, result.n:], axis1=1, axis2=2)
        new_gamma = np.maximum(u_moments, gamma_floor)
        if first_row_fixed:
            new_gamma[0] = hyper.gamma[0]
        if joint:
            rows = new_gamma[1:] if first_row_fixed else new_gamma
            shared = np.maximum(rows.mean(axis=0), gamma_floor)
            new_gamma = np.broadcast_to(shared, (K, m)).copy()
            if first_row_fixed:
                new_gamma[0] = hyper.gamma[0]
        change = float(np.max(np.abs(new_gamma - hyper.gamma) / hyper.gamma))
        hyper.loglik.append(result.loglik)
        report.record(loglik=result.loglik, gamma_change=change)
        hyper.gamma = new_gamma
        hyper.r = r
        if change < eps_thres:
            report.converged = True
            break
    report.x, report.u = result.x, result.u
    report.iterations = hyper.r
    report.extra.update(gamma=hyper.gamma, hyper=hyper, smoothing=result,
                        pruned=hyper.gamma <= gamma_floor * (1 + 1e-9))
    report.runtime_s = time.perf_counter() - start
    return report


def sbl_rks(model: LdsModel, measurements, r_max: int = 100, eps_thres: float = 1e-6,
            P0=None, gamma_floor: float = GAMMA_FLOOR) -> SolverReport:
    """Sparse Bayesian learning smoother with one gamma per input entry and step.

    Starts from gamma = 1 and alternates :func:`sbl_estep` with the M-step
    gamma_k = u_k^2 + diag(P^u_k) until ``r_max`` iterations or until the
    largest relative change of gamma is below ``eps_thres``. The trace holds
    the log marginal likelihood of each E-step, which EM keeps
    non-decreasing.
    """
    y = model.check_measurements(measurements)
    return _em_loop(lambda g: sbl_estep(model, y, g, P0), model.K, model.m,
                    r_max, eps_thres, joint=False, gamma_floor=gamma_floor)


def msbl_rks(model: LdsModel, measurements, r_max: int = 100, eps_thres: float = 1e-6,
             P0=None, gamma_floor: float = GAMMA_FLOOR) -> SolverReport:
    """SBL smoother with one gamma shared by all steps (common input support)."""
    y = model.check_measurements(measurements)
    return _em_loop(lambda g: sbl_estep(model, y, g, P0), model.K, model.m,
                    r_max, eps_thres, joint=True, gamma_floor=gamma_floor)


def sbl_rks_state_meas(model: LdsModel, measurements, r_max: int = 100, eps_thres: float = 1e-6,
                       joint: bool = False, gamma_floor: float = GAMMA_FLOOR) -> SolverReport:
    """SBL smoother for measurements y_k = C x_k + v_k.

    The E-step is :func:`~sparse_rks.rks.state_only_pass` with Gaussian
    input priors. The prior variance of the fictitious input u_0 stays at
    its initial value 1; gamma for u_1..u_{K-1} is learned. Estimates
    cover x_1..x_K and u_1..u_{K-1}.
    """
    y = model.check_measurements(measurements)
    if model.K < 2:
        raise ValueError("state-only estimation needs K >= 2")
    report = _em_loop(lambda g: state_only_pass(model, y, input_var=g), model.K, model.m,
                      r_max, eps_thres, joint=joint, gamma_floor=gamma_floor, first_row_fixed=True)
    report.extra["gamma"] = report.extra["gamma"][1:]
    report.extra["pruned"] = report.extra["pruned"][1:]
    return report


# ---------------------------------------------------------------------------
# variational Bayes


@dataclass
class VbState:
    """Factor moments of the mean-field posterior."""

    mean_x: np.ndarray     # (K, n)
    mean_u: np.ndarray     # (K, m)
    P_x: np.ndarray        # (K, n, n)
    P_u: np.ndarray        # (K, m, m)
    beta: np.ndarray       # (K, m); identical rows in joint mode
    a: float = 1e-6
    b: float = 1e-6
    joint: bool = False

    @classmethod
    def initial(cls, model: LdsModel, a=1e-6, b=1e-6, joint=False, beta=None) -> "VbState":
        K, n, m = model.K, model.n, model.m
        beta = np.ones((K, m)) if beta is None else np.broadcast_to(np.asarray(beta, float), (K, m)).copy()
        return cls(mean_x=np.zeros((K, n)), mean_u=np.zeros((K, m)),
                   P_x=np.stack([np.eye(n)] * K), P_u=np.stack([np.eye(m)] * K),
                   beta=beta, a=a, b=b, joint=joint)

    def u_second_moment(self) -> np.ndarray:
        return self.mean_u ** 2 + np.diagonal(self.P_u, axis1=1, axis2=2)


def _has_forward_coupling(k: int, K: int, drop_terminal_coupling: bool) -> bool:
    return k < K - 1 or not drop_terminal_coupling


def _next_state_mean(state: VbState, k: int) -> np.ndarray:
    """Mean of x_{k+1}; zero beyond the horizon."""
    return state.mean_x[k + 1] if k + 1 < state.mean_x.shape[0] else np.zeros(state.mean_x.shape[1])


def vb_update_x(k: int, state: VbState, model: LdsModel, measurements,
                drop_terminal_coupling: bool = False):
    """Coordinate update of q(x_k) (0-based ``k``).

    Precision C^T R^-1 C + Q_{k-1}^-1 + A_k^T Q_k^-1 A_k with x_0 = 0 and
    u_0 = 0 before the first step, so the first state has prior N(0, Q).
    Beyond the horizon x_{K+1} = 0 is used; ``drop_terminal_coupling``
    removes the last dynamics term instead.
    """
    y = np.atleast_2d(measurements)
    C, D, R = model.C_at(k), model.D_at(k), model.R_at(k)
    j = max(k - 1, 0)
    A_prev, B_prev, Q_prev = model.A_at(j), model.B_at(j), model.Q_at(j)
    CtRinv = right_spd_solve(C.T, R)
    precision = CtRinv @ C + spd_inverse(Q_prev)
    rhs = CtRinv @ (y[k] - D @ state.mean_u[k])
    if k > 0:
        rhs += spd_solve(Q_prev, A_prev @ state.mean_x[k - 1] + B_prev @ state.mean_u[k - 1])
    if _has_forward_coupling(k, model.K, drop_terminal_coupling):
        A, B, Q = model.A_at(k), model.B_at(k), model.Q_at(k)
        AtQinv = right_spd_solve(A.T, Q)
        precision = precision + AtQinv @ A
        rhs += AtQinv @ (_next_state_mean(state, k) - B @ state.mean_u[k])
    P_x = spd_inverse(symmetrize(precision))
    return P_x @ rhs, P_x


def vb_update_u(k: int, state: VbState, model: LdsModel, measurements,
                drop_terminal_coupling: bool = False):
    """Coordinate update of q(u_k): precision D^T R^-1 D + B^T Q^-1 B + diag(beta_k)."""
    y = np.atleast_2d(measurements)
    C, D, R = model.C_at(k), model.D_at(k), model.R_at(k)
    DtRinv = right_spd_solve(D.T, R)
    precision = DtRinv @ D + np.diag(state.beta[k])
    rhs = DtRinv @ (y[k] - C @ state.mean_x[k])
    if _has_forward_coupling(k, model.K, drop_terminal_coupling):
        A, B, Q = model.A_at(k), model.B_at(k), model.Q_at(k)
        BtQinv = right_spd_solve(B.T, Q)
        precision = precision + BtQinv @ B
        rhs += BtQinv @ (_next_state_mean(state, k) - A @ state.mean_x[k])
    P_u = spd_inverse(symmetrize(precision))
    return P_u @ rhs, P_u


def vb_update_beta(state: VbState, a: float | None = None, b: float | None = None,
                   k: int | None = None) -> np.ndarray:
    """Posterior mean precision (a + 1/2) / (b + <u^2>/2).

    In joint mode the second moments are averaged over steps and one
    precision vector is shared. With ``k`` given only that step's vector
    is returned (non-joint mode).
    """
    a = state.a if a is None else a
    b = state.b if b is None else b
    if a <= 0 or b <= 0:
        raise ValueError("Gamma hyperparameters must be positive")
    second = state.u_second_moment()
    if state.joint:
        second = np.broadcast_to(second.mean(axis=0), second.shape)
    beta = np.minimum((a + 0.5) / (b + 0.5 * second), BETA_CEILING)
    return beta[k] if k is not None else beta


def vb_free_energy(state: VbState, model: LdsModel, measurements,
                   drop_terminal_coupling: bool = False) -> float:
    """Evidence lower bound of the factorized posterior.

    q(beta) is taken as the Gamma distribution whose mean is ``state.beta``
    with shape a + 1/2 (the form produced by :func:`vb_update_beta`).
    """
    y = np.atleast_2d(measurements)
    K, n, m = model.K, model.n, model.m
    mx, mu, Px, Pu = state.mean_x, state.mean_u, state.P_x, state.P_u
    log2pi = np.log(2 * np.pi)

    def expected_quad(resid, cov, extra_trace):
        return -0.5 * (resid @ spd_solve(cov, resid) + extra_trace + spd_logdet(cov) + len(resid) * log2pi)

    elbo = 0.0
    for k in range(K):
        C, D, R = model.C_at(k), model.D_at(k), model.R_at(k)
        resid = y[k] - C @ mx[k] - D @ mu[k]
        tr = np.trace(spd_solve(R, C @ Px[k] @ C.T + D @ Pu[k] @ D.T))
        elbo += expected_quad(resid, R, tr)
    Q0 = model.Q_at(0)
    elbo += expected_quad(mx[0], Q0, np.trace(spd_solve(Q0, Px[0])))
    for k in range(K):
        if not _has_forward_coupling(k, K, drop_terminal_coupling):
            continue
        A, B, Q = model.A_at(k), model.B_at(k), model.Q_at(k)
        nxt = _next_state_mean(state, k)
        resid = nxt - A @ mx[k] - B @ mu[k]
        cov_terms = A @ Px[k] @ A.T + B @ Pu[k] @ B.T
        if k + 1 < K:
            cov_terms = cov_terms + Px[k + 1]
        elbo += expected_quad(resid, Q, np.trace(spd_solve(Q, cov_terms)))

    shape = state.a + 0.5
    rate = shape / state.beta
    mean_log_beta = digamma(shape) - np.log(rate)
    second = state.u_second_moment()
    elbo += np.sum(0.5 * (mean_log_beta - log2pi) - 0.5 * state.beta * second)
    rate_b = rate[0] if state.joint else rate
    mlb = mean_log_beta[0] if state.joint else mean_log_beta
    mb = state.beta[0] if state.joint else state.beta
    elbo += np.sum(state.a * np.log(state.b) - gammaln(state.a) + (state.a - 1) * mlb - state.b * mb)
    elbo += np.sum(shape - np.log(rate_b) + gammaln(shape) + (1 - shape) * digamma(shape))
    for k in range(K):
        elbo += 0.5 * (spd_logdet(Px[k]) + n * (1 + log2pi))
        elbo += 0.5 * (spd_logdet(Pu[k]) + m * (1 + log2pi))
    return float(elbo)


def _vb_loop(model, measurements, a, b, r_max, r_tilde_max, joint, drop_terminal_coupling,
             update_beta=True, beta_init=None, eps_thres=None) -> SolverReport:
    start = time.perf_counter()
    y = model.check_measurements(measurements)
    if r_max < 1 or r_tilde_max < 1:
        raise ValueError("iteration counts must be at least 1")
    state = VbState.initial(model, a=a, b=b, joint=joint, beta=beta_init)
    report = SolverReport(x=state.mean_x, u=state.mean_u)
    for r in range(1, r_max + 1):
        previous_u = state.mean_u.copy()
        for _ in range(r_tilde_max):
            for k in range(model.K):
                state.mean_x[k], state.P_x[k] = vb_update_x(k, state, model, y, drop_terminal_coupling)
            for k in range(model.K):
                state.mean_u[k], state.P_u[k] = vb_update_u(k, state, model, y, drop_terminal_coupling)
        if update_beta:
            state.beta = vb_update_beta(state)
        ensure_finite(state.mean_x, state.mean_u, state.beta, where="VB iterate")
        change = float(np.abs(state.mean_u - previous_u).max())
        elbo = vb_free_energy(state, model, y, drop_terminal_coupling) if update_beta else np.nan
        report.record(free_energy=elbo, delta_u=change)
        report.iterations = r
        if eps_thres is not None and change < eps_thres:
            report.converged = True
            break
    report.x, report.u = state.mean_x.copy(), state.mean_u.copy()
    report.extra.update(beta=state.beta.copy(), state=state)
    report.runtime_s = time.perf_counter() - start
    return report


def vb_rks(model: LdsModel, measurements, a: float = 1e-6, b: float = 1e-6, r_max: int = 100,
           r_tilde_max: int = 3, drop_terminal_coupling: bool = False, update_beta: bool = True,
           beta_init=None, eps_thres: float | None = None) -> SolverReport:
    """Mean-field variational Bayes smoother with per-entry input precisions.

    Each of the ``r_max`` outer rounds runs ``r_tilde_max`` sweeps of
    :func:`vb_update_x` over all steps followed by :func:`vb_update_u`, then
    updates the precisions. The trace records the free energy after every
    round. ``update_beta=False`` keeps the precisions at ``beta_init``, in
    which case the sweeps converge to the exact Gaussian posterior mean.
    """
    return _vb_loop(model, measurements, a, b, r_max, r_tilde_max, False,
                    drop_terminal_coupling, update_beta, beta_init, eps_thres)


def mvb_rks(model: LdsModel, measurements, a: float = 1e-6, b: float = 1e-6, r_max: int = 100,
            r_tilde_max: int = 3, drop_terminal_coupling: bool = False,
            eps_thres: float | None = None) -> SolverReport:
    """Variational Bayes smoother with one precision vector shared over steps."""
    return _vb_loop(model, measurements, a, b, r_max, r_tilde_max, True,
                    drop_terminal_coupling, True, None, eps_thres)

"""Robust Kalman smoothing of states and unknown inputs.

Two recursions are provided:

* :func:`rks_smooth` for measurements with direct input feedthrough,
  y_k = C x_k + D u_k + v_k, estimating the joint vector xi_k = [x_k; u_k];
* :func:`rks_smooth_state_only` for y_k = C x_k + v_k, where u_{k-1} is
  only visible through x_k and the joint vector is xi_k = [x_k; u_{k-1}].

No prior is placed on the inputs, so both compute the minimizer of a
weighted least-squares cost. :func:`batch_map_oracle` minimizes the same
cost with one dense solve and serves as the reference implementation.

Quadratic costs follow the convention ||a||^2_P = a^T P^-1 a (no 1/2).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._linalg import right_spd_solve, spd_inverse, spd_logdet, spd_solve, symmetrize
from .errors import DimensionMismatch, SingularFeedthrough, SingularHessian, SingularInputGram
from .model import LdsModel

RANK_TOL = 1e-10
GAIN_REGULARIZATION = 1e-12


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of xi at step ``t`` given measurements 1..``given``."""

    xi_hat: np.ndarray
    P_xi: np.ndarray
    n: int
    t: int
    given: int

    @property
    def x_hat(self) -> np.ndarray:
        return self.xi_hat[:self.n]

    @property
    def u_hat(self) -> np.ndarray:
        return self.xi_hat[self.n:]

    @property
    def P_x(self) -> np.ndarray:
        return self.P_xi[:self.n, :self.n]

    @property
    def P_xu(self) -> np.ndarray:
        return self.P_xi[:self.n, self.n:]

    @property
    def P_u(self) -> np.ndarray:
        return self.P_xi[self.n:, self.n:]


@dataclass
class SmoothingResult:
    """Smoothed (and filtered) means and covariances of the joint vector.

    ``layout`` is ``"direct"`` when row k of ``xi`` is [x_k; u_k] and
    ``"state_only"`` when it is [x_k; u_{k-1}]. In the latter case ``u`` has
    K-1 rows (inputs u_1..u_{K-1}) and ``u0`` holds the estimate of the
    fictitious input preceding the first state.
    """

    xi: np.ndarray                    # (K, n+m) smoothed means
    P: np.ndarray | None              # (K, n+m, n+m) smoothed covariances
    n: int
    layout: str = "direct"
    P_lag: np.ndarray | None = None   # (K-1, d, d): cov(xi_{k+1}, xi_k | all)
    xi_filt: np.ndarray | None = None
    P_filt: np.ndarray | None = None
    innovation_norms: np.ndarray | None = None
    loglik: float | None = None
    flags: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.xi.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.xi[:, :self.n]

    @property
    def u(self) -> np.ndarray:
        if self.layout == "state_only":
            return self.xi[1:, self.n:]
        return self.xi[:, self.n:]

    @property
    def u0(self) -> np.ndarray | None:
        return self.xi[0, self.n:] if self.layout == "state_only" else None

    @property
    def P_u(self) -> np.ndarray:
        """Smoothed input covariances aligned with :attr:`u`."""
        blocks = self.P[:, self.n:, self.n:]
        return blocks[1:] if self.layout == "state_only" else blocks

    def belief(self, k: int) -> GaussianBelief:
        return GaussianBelief(self.xi[k], self.P[k], self.n, k, self.K)

    def filtered_belief(self, k: int) -> GaussianBelief:
        return GaussianBelief(self.xi_filt[k], self.P_filt[k], self.n, k, k)


# ---------------------------------------------------------------------------
# gains


def feedthrough_pseudoinverse(D: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Weighted left inverse J = (D^T R^-1 D)^-1 D^T R^-1 of the feedthrough.

    Raises :class:`SingularFeedthrough` when the whitened D is rank deficient
    (which is always the case for fewer measurements than inputs).
    """
    p, m = D.shape
    if p < m:
        raise SingularFeedthrough(
            f"{p} measurements cannot identify {m} inputs; use a sparsity-aware estimator")
    chol_r = linalg.cholesky(R, lower=True)
    D_white = linalg.solve_triangular(chol_r, D, lower=True)
    svals = linalg.svdvals(D_white)
    if svals.size == 0 or svals[-1] < RANK_TOL * svals[0]:
        raise SingularFeedthrough("D^T R^-1 D is numerically singular")
    gram = D_white.T @ D_white
    gram_inv = np.linalg.inv(gram)
    R_inv = linalg.cho_solve((chol_r, True), np.eye(p))
    return gram_inv @ D.T @ R_inv


def compute_gains(C, D, R, P_pred, J=None):
    """Gains of the direct-feedthrough measurement update.

    Parameters
    ----------
    C, D, R : ndarray
        Measurement matrices and noise covariance of the current step.
    P_pred : ndarray
        Predicted state covariance P^x_{k|k-1}.
    J : ndarray, optional
        Precomputed :func:`feedthrough_pseudoinverse` of (D, R).

    Returns
    -------
    J, L, G : ndarray
        ``J`` (m x p) is the weighted left inverse of D, ``L`` (n x p) the
        Kalman gain for the state, ``G`` ((n+m) x p) the joint gain such that
        xi_{k|k} = T x_{k|k-1} + G (y_k - C x_{k|k-1}).
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    D = np.atleast_2d(np.asarray(D, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P_pred = np.atleast_2d(np.asarray(P_pred, dtype=float))
    n, m = C.shape[1], D.shape[1]
    if J is None:
        J = feedthrough_pseudoinverse(D, R)
    S = R + C @ P_pred @ C.T
    L = right_spd_solve(P_pred @ C.T, symmetrize(S))
    I_n, I_m, I_p = np.eye(n), np.eye(m), np.eye(R.shape[0])
    G_x = np.linalg.solve(I_n - L @ D @ J @ C, L @ (I_p - D @ J))
    G_u = np.linalg.solve(I_m - J @ C @ L @ D, J @ (I_p - C @ L))
    return J, L, np.vstack([G_x, G_u])


def gain_identity_errors(J, G, D) -> tuple[float, float]:
    """Relative deviations of J D from I and of G D from [0; I]."""
    m = D.shape[1]
    n = G.shape[0] - m
    target = np.vstack([np.zeros((n, m)), np.eye(m)])
    scale_j = max(1.0, np.linalg.norm(J, 2) * np.linalg.norm(D, 2))
    scale_g = max(1.0, np.linalg.norm(G, 2) * np.linalg.norm(D, 2))
    return (float(np.abs(J @ D - np.eye(m)).max() / scale_j),
            float(np.abs(G @ D - target).max() / scale_g))


def _smoother_gain(P_filt_cross: np.ndarray, P_pred_next: np.ndarray, flags: dict):
    """Return P_filt_cross @ inv(P_pred_next), regularizing if needed."""
    try:
        return right_spd_solve(P_filt_cross, P_pred_next)
    except np.linalg.LinAlgError:
        flags["regularized_smoother_gain"] = flags.get("regularized_smoother_gain", 0) + 1
        reg = P_pred_next + GAIN_REGULARIZATION * np.eye(P_pred_next.shape[0])
        return right_spd_solve(P_filt_cross, reg)


def initial_joint_covariance(n: int, m: int, P0=None) -> np.ndarray:
    if P0 is None:
        return np.eye(n + m)
    P0 = np.atleast_2d(np.asarray(P0, dtype=float))
    if P0.shape == (1, 1):
        return float(P0[0, 0]) * np.eye(n + m)
    if P0.shape != (n + m, n + m):
        raise DimensionMismatch(f"P0 must be {(n + m, n + m)}")
    return P0


def first_state_prior(model: LdsModel, P0=None) -> np.ndarray:
    """Covariance of x_1 implied by xi_0 ~ N(0, P0), Q_0 = 0 and A_0 = A_1."""
    A_tilde = np.hstack([model.A_at(0), model.B_at(0)])
    return symmetrize(A_tilde @ initial_joint_covariance(model.n, model.m, P0) @ A_tilde.T)


# ---------------------------------------------------------------------------
# direct feedthrough


def rks_smooth(model: LdsModel, measurements, P0=None, diagnostics: bool = False,
               feedthrough_inverses=None) -> SmoothingResult:
    """Jointly smooth states and inputs with direct input feedthrough.

    The forward pass starts from xi_{0|0} = 0 with covariance ``P0``
    (identity by default) and no process noise before the first state. Each
    step predicts x_{k|k-1} = [A B] xi_{k-1|k-1}, applies the joint gain of
    :func:`compute_gains`, and propagates the covariance in Joseph-like form
    (T - G C) P (T - G C)^T + G R G^T. The backward pass is a
    Rauch-Tung-Striebel sweep on xi.

    With ``diagnostics`` the per-step gain identity errors are recorded in
    ``result.flags["gain_identity_errors"]``. ``feedthrough_inverses`` may
    supply the K matrices of :func:`feedthrough_pseudoinverse` when the
    caller can form them more cheaply.
    """
    y = model.check_measurements(measurements)
    n, m, K = model.n, model.m, model.K
    d = n + m
    T = np.vstack([np.eye(n), np.zeros((m, n))])
    xi = np.zeros(d)
    P = initial_joint_covariance(n, m, P0)
    xi_f = np.zeros((K, d))
    P_f = np.zeros((K, d, d))
    x_pred = np.zeros((K, n))
    P_pred = np.zeros((K, n, n))
    innov_norms = np.zeros(K)
    flags: dict = {}
    identity_errors = []
    J_cache = feedthrough_pseudoinverse(model.D_at(0), model.R_at(0)) \
        if model.D.shape[0] == 1 and model.R.shape[0] == 1 else None

    for k in range(K):
        A_tilde = np.hstack([model.A_at(max(k - 1, 0)), model.B_at(max(k - 1, 0))])
        Q_prev = model.Q_at(k - 1) if k > 0 else np.zeros((n, n))
        x_pred[k] = A_tilde @ xi
        P_pred[k] = symmetrize(A_tilde @ P @ A_tilde.T + Q_prev)
        C, D, R = model.C_at(k), model.D_at(k), model.R_at(k)
        J_k = J_cache if feedthrough_inverses is None else feedthrough_inverses[k]
        J, _, G = compute_gains(C, D, R, P_pred[k], J=J_k)
        if diagnostics:
            identity_errors.append(gain_identity_errors(J, G, D))
        innov = y[k] - C @ x_pred[k]
        innov_norms[k] = np.linalg.norm(innov)
        xi = T @ x_pred[k] + G @ innov
        TG = T - G @ C
        P = symmetrize(TG @ P_pred[k] @ TG.T + G @ R @ G.T)
        xi_f[k], P_f[k] = xi, P

    xi_s = xi_f.copy()
    P_s = P_f.copy()
    P_lag = np.zeros((max(K - 1, 0), d, d))
    for k in range(K - 2, -1, -1):
        A_tilde = np.hstack([model.A_at(k), model.B_at(k)])
        gain = _smoother_gain(P_f[k] @ A_tilde.T, P_pred[k + 1], flags)
        P_s[k] = symmetrize(P_f[k] + gain @ (P_s[k + 1][:n, :n] - P_pred[k + 1]) @ gain.T)
        xi_s[k] = xi_f[k] + gain @ (xi_s[k + 1][:n] - A_tilde @ xi_f[k])
        P_lag[k] = P_s[k + 1][:, :n] @ gain.T

    if diagnostics:
        flags["gain_identity_errors"] = np.array(identity_errors)
    return SmoothingResult(xi=xi_s, P=P_s, n=n, layout="direct", P_lag=P_lag,
                           xi_filt=xi_f, P_filt=P_f, innovation_norms=innov_norms, flags=flags)


# ---------------------------------------------------------------------------
# state-only measurements


def state_only_pass(model: LdsModel, measurements, input_var=None, P0_x=None) -> SmoothingResult:
    """Filter and smooth xi_k = [x_k; u_{k-1}] from y_k = C x_k + v_k.

    Parameters
    ----------
    input_var : ndarray, shape (K, m), optional
        Prior variances of u_0..u_{K-1}. ``None`` means no input prior.
    P0_x : ndarray, optional
        Covariance of x_0 (identity by default). The transition into x_1
        reuses A, B, Q of the first step.

    The log marginal likelihood of the measurements is returned in
    ``loglik`` when an input prior is given.
    """
    y = model.check_measurements(measurements)
    n, m, K = model.n, model.m, model.K
    d = n + m
    x_prev = np.zeros(n)
    Px_prev = np.eye(n) if P0_x is None else np.atleast_2d(np.asarray(P0_x, dtype=float))
    if input_var is not None:
        input_var = np.broadcast_to(np.asarray(input_var, dtype=float), (K, m))
    xi_f = np.zeros((K, d))
    P_f = np.zeros((K, d, d))
    P_star = np.zeros((K, n, n))
    innov_norms = np.zeros(K)
    loglik = 0.0
    flags: dict = {}
    I_n, I_m = np.eye(n), np.eye(m)

    for k in range(K):
        j = max(k - 1, 0)
        A, B, Q = model.A_at(j), model.B_at(j), model.Q_at(j)
        C, R = model.C_at(k), model.R_at(k)
        P_star[k] = symmetrize(A @ Px_prev @ A.T + Q)
        Pinv_B = spd_solve(P_star[k], B)
        gram = B.T @ Pinv_B
        if input_var is None:
            if not B.any():
                J = np.zeros((m, n))
                flags["unobservable_inputs"] = True
            else:
                svals = linalg.svdvals(gram)
                if svals[-1] < RANK_TOL * svals[0]:
                    raise SingularInputGram(f"input Gram matrix singular at step {k + 1}")
                J = np.linalg.solve(gram, Pinv_B.T)
            prior_u = np.zeros((m, m))
        else:
            prior_u = np.diag(input_var[k])
            J = np.linalg.solve(gram + np.diag(1.0 / input_var[k]), Pinv_B.T)
        S = symmetrize(R + C @ P_star[k] @ C.T)
        L = right_spd_solve(P_star[k] @ C.T, S)
        IL = I_n - L @ C
        F = np.linalg.solve(I_n - IL @ B @ J, L)
        M = np.linalg.solve(I_m - J @ IL @ B, J @ L)
        IFC = I_n - F @ C
        Z = np.block([[IFC @ A, IFC @ B], [-M @ C @ A, I_m - M @ C @ B]])
        N = np.block([[IFC, -F], [-M @ C, -M]])
        P = Z @ linalg.block_diag(Px_prev, prior_u) @ Z.T + N @ linalg.block_diag(Q, R) @ N.T
        P = symmetrize(P)
        innov = y[k] - C @ A @ x_prev
        innov_norms[k] = np.linalg.norm(innov)
        xi = np.concatenate([A @ x_prev + F @ innov, M @ innov])
        if input_var is not None:
            S_full = symmetrize(S + C @ B @ prior_u @ B.T @ C.T)
            loglik += -0.5 * (innov @ spd_solve(S_full, innov) + spd_logdet(S_full)
                              + len(innov) * np.log(2 * np.pi))
        xi_f[k], P_f[k] = xi, P
        x_prev, Px_prev = xi[:n], P[:n, :n]

    xi_s = xi_f.copy()
    P_s = P_f.copy()
    P_lag = np.zeros((max(K - 1, 0), d, d))
    for k in range(K - 2, -1, -1):
        A, B = model.A_at(k), model.B_at(k)
        A_hat = np.hstack([A, np.zeros((n, m))])
        B_hat = np.hstack([I_n, -B])
        gain = _smoother_gain(P_f[k] @ A_hat.T, P_star[k + 1], flags)
        P_s[k] = symmetrize(P_f[k] + gain @ (B_hat @ P_s[k + 1] @ B_hat.T - P_star[k + 1]) @ gain.T)
        xi_s[k] = xi_f[k] + gain @ (B_hat @ xi_s[k + 1] - A_hat @ xi_f[k])
        P_lag[k] = P_s[k + 1] @ B_hat.T @ gain.T

    return SmoothingResult(xi=xi_s, P=P_s, n=n, layout="state_only", P_lag=P_lag,
                           xi_filt=xi_f, P_filt=P_f, innovation_norms=innov_norms,
                           loglik=loglik if input_var is not None else None, flags=flags)


def rks_smooth_state_only(model: LdsModel, measurements, P0_x=None) -> SmoothingResult:
    """Smooth states and inputs when the measurements do not see the input.

    The measurement model is y_k = C x_k + v_k (D is ignored); the input
    u_{k-1} is recovered from its effect on x_k, so only u_1..u_{K-1} are
    estimated. Requires the input Gram matrix B^T (P*)^-1 B to be
    nonsingular unless B is identically zero, in which case the inputs are
    unobservable, reported as zero and the recursion reduces to a classical
    Kalman smoother on the states.
    """
    return state_only_pass(model, measurements, input_var=None, P0_x=P0_x)


# ---------------------------------------------------------------------------
# classical smoother with known inputs


def kalman_smoother(model: LdsModel, measurements, inputs=None, x1_mean=None, x1_cov=None,
                    use_feedthrough: bool = True):
    """Textbook Kalman filter and RTS smoother with known inputs.

    Returns a dict with smoothed ``x`` and ``P``, filtered ``x_filt`` and
    ``P_filt``, and the log marginal likelihood ``loglik``.
    """
    y = model.check_measurements(measurements)
    n, K = model.n, model.K
    u = np.zeros((K, model.m)) if inputs is None else np.asarray(inputs, dtype=float)
    x = np.zeros(n) if x1_mean is None else np.asarray(x1_mean, dtype=float)
    P = np.eye(n) if x1_cov is None else np.asarray(x1_cov, dtype=float)
    x_f, P_f = np.zeros((K, n)), np.zeros((K, n, n))
    x_p, P_p = np.zeros((K, n)), np.zeros((K, n, n))
    loglik = 0.0
    for k in range(K):
        if k > 0:
            A = model.A_at(k - 1)
            x = A @ x_f[k - 1] + model.B_at(k - 1) @ u[k - 1]
            P = symmetrize(A @ P_f[k - 1] @ A.T + model.Q_at(k - 1))
        x_p[k], P_p[k] = x, P
        C, R = model.C_at(k), model.R_at(k)
        resid = y[k] - C @ x - (model.D_at(k) @ u[k] if use_feedthrough else 0.0)
        S = symmetrize(C @ P @ C.T + R)
        gain = right_spd_solve(P @ C.T, S)
        x_f[k] = x + gain @ resid
        P_f[k] = symmetrize(P - gain @ S @ gain.T)
        loglik += -0.5 * (resid @ spd_solve(S, resid) + spd_logdet(S) + len(resid) * np.log(2 * np.pi))
    x_s, P_s = x_f.copy(), P_f.copy()
    for k in range(K - 2, -1, -1):
        gain = right_spd_solve(P_f[k] @ model.A_at(k).T, P_p[k + 1])
        x_s[k] = x_f[k] + gain @ (x_s[k + 1] - x_p[k + 1])
        P_s[k] = symmetrize(P_f[k] + gain @ (P_s[k + 1] - P_p[k + 1]) @ gain.T)
    return {"x": x_s, "P": P_s, "x_filt": x_f, "P_filt": P_f, "loglik": loglik}


# ---------------------------------------------------------------------------
# cost and dense oracle


def rks_cost(model: LdsModel, measurements, x, u, P0=None) -> float:
    """Weighted least-squares cost minimized by :func:`rks_smooth`.

    Sum of the first-state prior term, the measurement residuals and the
    dynamics residuals, each as a^T W^-1 a.
    """
    y = model.check_measurements(measurements)
    S1 = first_state_prior(model, P0)
    cost = float(x[0] @ spd_solve(S1, x[0]))
    for k in range(model.K):
        r = y[k] - model.C_at(k) @ x[k] - model.D_at(k) @ u[k]
        cost += float(r @ spd_solve(model.R_at(k), r))
        if k < model.K - 1:
            e = x[k + 1] - model.A_at(k) @ x[k] - model.B_at(k) @ u[k]
            cost += float(e @ spd_solve(model.Q_at(k), e))
    return cost


def rks_cost_gradient(model: LdsModel, measurements, x, u, P0=None):
    """Gradient of :func:`rks_cost` with respect to (x, u), as two arrays."""
    y = model.check_measurements(measurements)
    gx, gu = np.zeros_like(x, dtype=float), np.zeros_like(u, dtype=float)
    gx[0] += 2 * spd_solve(first_state_prior(model, P0), x[0])
    for k in range(model.K):
        C, D = model.C_at(k), model.D_at(k)
        w = spd_solve(model.R_at(k), y[k] - C @ x[k] - D @ u[k])
        gx[k] -= 2 * C.T @ w
        gu[k] -= 2 * D.T @ w
        if k < model.K - 1:
            A, B = model.A_at(k), model.B_at(k)
            e = spd_solve(model.Q_at(k), x[k + 1] - A @ x[k] - B @ u[k])
            gx[k + 1] += 2 * e
            gx[k] -= 2 * A.T @ e
            gu[k] -= 2 * B.T @ e
    return gx, gu


class _NormalEquations:
    """Accumulates sum_j ||target_j - M_j z||^2_{W_j} into (H, g)."""

    def __init__(self, size: int):
        self.H = np.zeros((size, size))
        self.g = np.zeros(size)

    def add(self, terms, target, cov):
        """``terms`` is a list of (offset, matrix) pairs acting on z."""
        W = spd_inverse(np.atleast_2d(cov))
        for off_i, M_i in terms:
            WM_i = W @ M_i
            self.g[off_i:off_i + M_i.shape[1]] += M_i.T @ (W @ target)
            for off_j, M_j in terms:
                self.H[off_j:off_j + M_j.shape[1], off_i:off_i + M_i.shape[1]] += M_j.T @ WM_i

    def add_diagonal(self, offset, precisions):
        idx = np.arange(offset, offset + len(precisions))
        self.H[idx, idx] += precisions


def batch_map_oracle(model: LdsModel, measurements, mode: str = "direct", P0=None,
                     input_var=None, ridge: float = 0.0, x1_cov=None,
                     compute_covariance: bool | None = None) -> SmoothingResult:
    """Minimize the smoothing cost with one dense symmetric solve.

    Parameters
    ----------
    mode : {"direct", "state_only"}
        ``direct`` stacks [x_1..x_K, u_1..u_K] with measurements
        C x_k + D u_k and a prior on x_1 matching :func:`rks_smooth`.
        ``state_only`` stacks [x_0..x_K, u_0..u_{K-1}] with measurements
        C x_k, x_0 ~ N(0, I) and the first transition using A, B, Q of the
        first step, matching :func:`state_only_pass`.
    input_var : ndarray (K, m), optional
        Gaussian prior variances on the inputs (u_1..u_K or u_0..u_{K-1}).
    ridge : float
        Extra penalty ridge * ||u||^2 on every input.
    x1_cov : ndarray, optional
        Override of the prior covariance of x_1 in direct mode.

    Returns the minimizer, with the inverse Hessian blocks as covariances
    when ``compute_covariance`` (default: problems of size <= 800).
    """
    y = model.check_measurements(measurements)
    n, m, K = model.n, model.m, model.K
    if mode not in ("direct", "state_only"):
        raise ValueError(f"unknown mode {mode!r}")
    if input_var is not None:
        input_var = np.broadcast_to(np.asarray(input_var, dtype=float), (K, m))
    if mode == "direct":
        n_x = K
        ox = lambda k: k * n                       # x_{k+1}
        ou = lambda k: K * n + k * m               # u_{k+1}
        eqs = _NormalEquations(K * (n + m))
        S1 = first_state_prior(model, P0) if x1_cov is None else np.atleast_2d(x1_cov)
        eqs.add([(ox(0), np.eye(n))], np.zeros(n), S1)
        for k in range(K):
            eqs.add([(ox(k), model.C_at(k)), (ou(k), model.D_at(k))], y[k], model.R_at(k))
            if k < K - 1:
                eqs.add([(ox(k + 1), np.eye(n)), (ox(k), -model.A_at(k)), (ou(k), -model.B_at(k))],
                        np.zeros(n), model.Q_at(k))
    else:
        n_x = K + 1
        ox = lambda k: k * n                       # x_k, k = 0..K
        ou = lambda k: (K + 1) * n + k * m         # u_k, k = 0..K-1
        eqs = _NormalEquations((K + 1) * n + K * m)
        eqs.add([(ox(0), np.eye(n))], np.zeros(n), np.eye(n))
        for k in range(K):
            j = max(k - 1, 0)
            eqs.add([(ox(k + 1), np.eye(n)), (ox(k), -model.A_at(j)), (ou(k), -model.B_at(j))],
                    np.zeros(n), model.Q_at(j))
            eqs.add([(ox(k + 1), model.C_at(k))], y[k], model.R_at(k))
    for k in range(K):
        if input_var is not None:
            eqs.add_diagonal(ou(k), 1.0 / input_var[k])
        if ridge:
            eqs.add_diagonal(ou(k), np.full(m, float(ridge)))

    H = symmetrize(eqs.H)
    try:
        factor = linalg.cho_factor(H, lower=True)
    except np.linalg.LinAlgError:
        raise SingularHessian("stacked normal equations are singular") from None
    z = linalg.cho_solve(factor, eqs.g)
    size = H.shape[0]
    if compute_covariance is None:
        compute_covariance = size <= 800
    cov = linalg.cho_solve(factor, np.eye(size)) if compute_covariance else None

    x_all = z[:n_x * n].reshape(n_x, n)
    u_all = z[n_x * n:].reshape(K, m)
    if mode == "direct":
        xi = np.hstack([x_all, u_all])
        idx = [np.r_[ox(k):ox(k) + n, ou(k):ou(k) + m] for k in range(K)]
    else:
        xi = np.hstack([x_all[1:], u_all])
        idx = [np.r_[ox(k + 1):ox(k + 1) + n, ou(k):ou(k) + m] for k in range(K)]
    P = None
    if cov is not None:
        P = np.stack([symmetrize(cov[np.ix_(i, i)]) for i in idx])
    result = SmoothingResult(xi=xi, P=P, n=n, layout=mode)
    result.flags["hessian"] = H
    result.flags["rhs"] = eqs.g
    return result

"""Basis-pursuit baselines on the stacked (batch) measurement model.

All K measurements are stacked into

    y~ = O x_1 + Gamma u~ + M w~ + v~

The initial-state term is projected out, the remaining system is reduced to
its numerical rank and prewhitened, the inputs are recovered by basis
pursuit denoising, and finally x_1 (weighted least squares) and the states
(Kalman smoother with known inputs) are reconstructed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._linalg import right_spd_solve, symmetrize
from .errors import DimensionMismatch, Infeasible, RankCollapse, SingularGram
from .model import LdsModel
from .report import SolverReport

RANK_TOL = 1e-10
EIGEN_FLOOR = 1e-15
MAX_STACKED_ENTRIES = 5e7


@dataclass(frozen=True)
class StackedSystem:
    y_tilde: np.ndarray    # (Kp,)
    O: np.ndarray          # (Kp, n)
    Gamma: np.ndarray      # (Kp, Km)
    M: np.ndarray          # (Kp, (K-1) n)
    Q_tilde: np.ndarray    # (Kp, Kp)
    K: int
    n: int
    m: int
    p: int


@dataclass(frozen=True)
class ReducedSystem:
    y_bar: np.ndarray      # (R,)
    Gamma_bar: np.ndarray  # (R, Km)
    R: int
    Pi: np.ndarray         # (Kp, Kp)
    Psi1: np.ndarray       # (R, Kp)
    Lambda: np.ndarray     # (R,)
    Phi1: np.ndarray       # (R, Km)
    Q_bar: np.ndarray      # (R, R)
    whitener: np.ndarray   # (R, R), whitener @ Q_bar @ whitener.T = I

    def transform(self, stacked_vector: np.ndarray) -> np.ndarray:
        """Map a stacked measurement-space vector to the whitened reduced space."""
        return self.whitener @ (self.Psi1 @ (self.Pi @ stacked_vector))


def build_stacked_system(model: LdsModel, measurements) -> StackedSystem:
    """Stack all K measurement equations of a time-invariant model."""
    if not model.time_invariant:
        raise DimensionMismatch("stacked construction needs a time-invariant model")
    y = model.check_measurements(measurements)
    n, m, p, K = model.n, model.m, model.p, model.K
    if K * p * K * m > MAX_STACKED_ENTRIES:
        raise ValueError(f"stacked input matrix would hold {K * p * K * m:.3g} entries "
                         f"(limit {MAX_STACKED_ENTRIES:.0e})")
    A, B, C, D = model.A_at(0), model.B_at(0), model.C_at(0), model.D_at(0)
    Q, R = model.Q_at(0), model.R_at(0)
    # C A^j for j = 0..K-1
    CA = [C]
    for _ in range(1, K):
        CA.append(CA[-1] @ A)
    O = np.vstack(CA)
    Gamma = np.zeros((K * p, K * m))
    M = np.zeros((K * p, (K - 1) * n))
    for i in range(K):
        rows = slice(i * p, (i + 1) * p)
        Gamma[rows, i * m:(i + 1) * m] = D
        for j in range(i):
            Gamma[rows, j * m:(j + 1) * m] = CA[i - j - 1] @ B
            M[rows, j * n:(j + 1) * n] = CA[i - j - 1]
    Q_tilde = M @ linalg.block_diag(*([Q] * (K - 1))) @ M.T if K > 1 else np.zeros((p, p))
    Q_tilde = symmetrize(Q_tilde + linalg.block_diag(*([R] * K)))
    return StackedSystem(y_tilde=y.reshape(-1), O=O, Gamma=Gamma, M=M, Q_tilde=Q_tilde,
                         K=K, n=n, m=m, p=p)


def reduce_and_whiten(stacked: StackedSystem) -> ReducedSystem:
    """Project out x_1, keep the numerical range of the input map and whiten."""
    Kp = stacked.O.shape[0]
    basis = linalg.orth(stacked.O, rcond=RANK_TOL)
    Pi = np.eye(Kp) - basis @ basis.T
    U, svals, Vt = linalg.svd(Pi @ stacked.Gamma, full_matrices=False)
    # rank relative to the unprojected input map, so a projection that
    # annihilates everything up to rounding counts as rank zero
    reference = linalg.norm(stacked.Gamma, 2)
    rank = int(np.sum(svals > RANK_TOL * reference)) if reference > 0 else 0
    if rank == 0:
        raise RankCollapse("no measurement information left after removing the initial state")
    Psi1 = U[:, :rank].T
    Q_bar = symmetrize(Psi1 @ Pi @ stacked.Q_tilde @ Pi.T @ Psi1.T)
    whitener = _whitener(Q_bar)
    y_bar = whitener @ (Psi1 @ (Pi @ stacked.y_tilde))
    Gamma_bar = whitener @ (Psi1 @ (Pi @ stacked.Gamma))
    return ReducedSystem(y_bar=y_bar, Gamma_bar=Gamma_bar, R=rank, Pi=Pi, Psi1=Psi1,
                         Lambda=svals[:rank], Phi1=Vt[:rank], Q_bar=Q_bar, whitener=whitener)


def _whitener(cov: np.ndarray) -> np.ndarray:
    """W with W cov W^T = I: inverse Cholesky factor, or a floored eigen-square-root
    when rounding has made ``cov`` numerically indefinite."""
    try:
        chol = linalg.cholesky(cov, lower=True)
        return linalg.solve_triangular(chol, np.eye(cov.shape[0]), lower=True)
    except linalg.LinAlgError:
        vals, vecs = linalg.eigh(cov)
        floor = EIGEN_FLOOR * vals[-1]
        return (vecs / np.sqrt(np.maximum(vals, floor))).T


def epsilon_default(R: int) -> float:
    """Residual radius sqrt(R) (1 + 2 sqrt(2 / R)) for unit-variance noise."""
    if R < 1:
        raise ValueError("R must be at least 1")
    return float(np.sqrt(R) * (1.0 + 2.0 * np.sqrt(2.0 / R)))


def _group_permutation(K: int, m: int) -> np.ndarray:
    """Order a step-major stacked input so each coordinate's K values are adjacent."""
    return np.array([k * m + i for i in range(m) for k in range(K)])


def _shrink(v, thresh, group_size):
    if group_size is None:
        return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)
    blocks = v.reshape(-1, group_size)
    norms = np.linalg.norm(blocks, axis=1, keepdims=True)
    scale = np.maximum(1.0 - thresh / np.maximum(norms, 1e-300), 0.0)
    return (blocks * scale).reshape(-1)


def _project_ball(z, radius):
    norm = np.linalg.norm(z)
    return z if norm <= radius else z * (radius / norm)


def bpdn_solve(Gamma_bar, y_bar, epsilon: float, mode: str = "l1", group_shape=None,
               rho: float = 1.0, max_iter: int = 5000, abs_tol: float = 1e-8,
               rel_tol: float = 1e-6, return_info: bool = False):
    """Minimize ||u||_1 (or the sum of group norms) s.t. ||y_bar - Gamma_bar u|| <= epsilon.

    ADMM on the splitting u = v, Gamma_bar u - y_bar = z with z in the
    epsilon-ball. In ``group`` mode ``group_shape = (K, m)`` and the stacked
    input [u_1; ...; u_K] is grouped by coordinate. The returned point always
    satisfies the residual bound (see :func:`_restore_feasibility`).
    """
    G = np.atleast_2d(np.asarray(Gamma_bar, dtype=float))
    y = np.asarray(y_bar, dtype=float).reshape(-1)
    Rdim, N = G.shape
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if mode not in ("l1", "group"):
        raise ValueError(f"unknown mode {mode!r}")
    info = {"iterations": 0, "converged": True}
    slack = epsilon * 1e-6 + 1e-9

    u_ls = np.linalg.lstsq(G, y, rcond=None)[0]
    r_ls = G @ u_ls - y
    if np.linalg.norm(r_ls) > epsilon + slack:
        raise Infeasible(f"least-squares residual {np.linalg.norm(r_ls):.3g} exceeds epsilon {epsilon:.3g}")
    if np.linalg.norm(y) <= epsilon:
        out = np.zeros(N)
        return (out, info) if return_info else out

    # the problem is invariant to scaling (G, y, epsilon) jointly; normalizing
    # ||G|| keeps the penalty rho comparable to the data term
    scale = linalg.norm(G, 2)
    if scale > 0:
        G, y, epsilon = G / scale, y / scale, epsilon / scale
        u_ls = u_ls.copy()

    perm = None
    group_size = None
    if mode == "group":
        if group_shape is None:
            raise ValueError("group mode needs group_shape=(K, m)")
        K, m = group_shape
        if K * m != N:
            raise DimensionMismatch("group_shape does not match the number of unknowns")
        perm = _group_permutation(K, m)
        G = G[:, perm]
        u_ls = u_ls[perm]
        group_size = K

    # (I + G^T G)^-1 through the smaller of the two Gram matrices
    if Rdim < N:
        small = linalg.cho_factor(np.eye(Rdim) + G @ G.T, lower=True)
        solve = lambda b: b - G.T @ linalg.cho_solve(small, G @ b)
    else:
        big = linalg.cho_factor(np.eye(N) + G.T @ G, lower=True)
        solve = lambda b: linalg.cho_solve(big, b)

    u = np.zeros(N)
    v = np.zeros(N)
    z = -y.copy()
    z = _project_ball(z, epsilon)
    d1 = np.zeros(N)
    d2 = np.zeros(Rdim)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = solve((v - d1) + G.T @ (y + z - d2))
        Gu = G @ u
        v_old, z_old = v, z
        v = _shrink(u + d1, 1.0 / rho, group_size)
        z = _project_ball(Gu - y + d2, epsilon)
        d1 += u - v
        d2 += Gu - y - z
        r_pri = np.sqrt(np.sum((u - v) ** 2) + np.sum((Gu - y - z) ** 2))
        s_dual = rho * np.linalg.norm((v - v_old) + G.T @ (z - z_old))
        eps_pri = np.sqrt(N + Rdim) * abs_tol + rel_tol * max(
            np.sqrt(np.sum(u ** 2) + np.sum(Gu ** 2)), np.sqrt(np.sum(v ** 2) + np.sum(z ** 2)),
            np.linalg.norm(y))
        eps_dual = np.sqrt(N) * abs_tol + rel_tol * rho * np.linalg.norm(d1 + G.T @ d2)
        if r_pri <= eps_pri and s_dual <= eps_dual:
            converged = True
            break

    out = _restore_feasibility(G, y, v, u_ls, epsilon)
    if perm is not None:
        restored = np.empty(N)
        restored[perm] = out
        out = restored
    info.update(iterations=it, converged=converged)
    return (out, info) if return_info else out


def _nearest_on_support(G, y, u, cols, epsilon):
    """Closest point to ``u`` supported on ``cols`` with ||G w - y|| <= epsilon, or None.

    Minimizes ||w - u||^2 + mu ||G w - y||^2 over the support and bisects on
    log(mu) until the residual meets the bound; mu -> infinity is least
    squares on the support.
    """
    U, sv, Vt = np.linalg.svd(G[:, cols], full_matrices=False)
    keep = sv > RANK_TOL * sv[0]
    U, sv, Vt = U[:, keep], sv[keep], Vt[keep]
    u_s = u[cols]
    coef_u, coef_y = Vt @ u_s, U.T @ y
    outside = np.linalg.norm(y - U @ coef_y)

    def point(mu):
        inner = (coef_u + mu * sv * coef_y) / (1.0 + mu * sv ** 2)
        return u_s - Vt.T @ (coef_u - inner)

    def resid(w):
        return np.linalg.norm(G[:, cols] @ w - y)

    if outside > epsilon:
        return None
    lo, hi = -30.0, 30.0
    if resid(point(10.0 ** hi)) > epsilon:
        # least-squares limit
        w = u_s - Vt.T @ (coef_u - coef_y / sv)
    else:
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if resid(point(10.0 ** mid)) > epsilon:
                lo = mid
            else:
                hi = mid
        w = point(10.0 ** hi)
    out = np.zeros_like(u)
    out[cols] = w
    return out


def _restore_feasibility(G, y, u, u_ls, epsilon):
    """Return a point within the residual bound, as close to ``u`` as practical.

    A marginally infeasible ADMM iterate is moved to the nearest feasible
    point with the same support. If none exists the support grows by the
    column most correlated with the residual, which keeps the point sparse.
    The last resort moves along the segment toward the least-squares
    solution ``u_ls``.
    """
    slack = epsilon * 1e-6 + 1e-9
    r_u = G @ u - y
    if np.linalg.norm(r_u) <= epsilon + slack:
        return u
    in_support = u != 0
    while 0 < in_support.sum() <= G.shape[0]:
        cols = np.flatnonzero(in_support)
        polished = _nearest_on_support(G, y, u, cols, epsilon)
        if polished is not None:
            return polished
        if in_support.all():
            break
        w = np.zeros_like(u)
        w[cols] = np.linalg.lstsq(G[:, cols], y, rcond=None)[0]
        scores = np.abs(G.T @ (G @ w - y))
        scores[in_support] = -1.0
        in_support[np.argmax(scores)] = True
    r_ls = G @ u_ls - y
    diff = r_ls - r_u
    a = diff @ diff
    b = 2.0 * (r_u @ diff)
    c = r_u @ r_u - epsilon ** 2
    if a <= 0:
        return u_ls
    disc = max(b * b - 4.0 * a * c, 0.0)
    theta = min(max((-b - np.sqrt(disc)) / (2.0 * a), 0.0), 1.0)
    return u + theta * (u_ls - u)


def wls_initial_state(stacked: StackedSystem, u_star, return_cov: bool = False):
    """Weighted least-squares x_1 given the stacked inputs ``u_star``."""
    white = _whitener(stacked.Q_tilde)
    O_w = white @ stacked.O
    resid = stacked.y_tilde - stacked.Gamma @ np.asarray(u_star, dtype=float).reshape(-1)
    r_w = white @ resid
    svals = linalg.svdvals(O_w)
    if svals[-1] < RANK_TOL * svals[0]:
        raise SingularGram("weighted observability Gram matrix is singular")
    gram = O_w.T @ O_w
    x1 = np.linalg.solve(gram, O_w.T @ r_w)
    if return_cov:
        return x1, symmetrize(np.linalg.inv(gram))
    return x1


def known_input_smoother(model: LdsModel, measurements, inputs, x1, P1):
    """Kalman filter/smoother from a fixed x_1 with known inputs.

    x_1 and its covariance are taken as given (they already use all the
    measurements); steps 2..K are filtered and then smoothed backwards to
    step 2. The backward mean update is written as

        x_{k|K} = x_{k|k} + K_k (x_{k+1|K} - A x_{k|k}) - (I - K_k A) P_{k|k} A^T Q^-1 B u_k,

    which equals the usual RTS update around the input-shifted prediction.
    """
    y = model.check_measurements(measurements)
    u = np.asarray(inputs, dtype=float).reshape(model.K, model.m)
    n, K = model.n, model.K
    x_f, P_f = np.zeros((K, n)), np.zeros((K, n, n))
    P_p = np.zeros((K, n, n))
    x_f[0], P_f[0] = x1, P1
    I_n = np.eye(n)
    for k in range(1, K):
        A, B, Q = model.A_at(k - 1), model.B_at(k - 1), model.Q_at(k - 1)
        C, D, R = model.C_at(k), model.D_at(k), model.R_at(k)
        x_pred = A @ x_f[k - 1] + B @ u[k - 1]
        P_p[k] = symmetrize(A @ P_f[k - 1] @ A.T + Q)
        S = symmetrize(R + C @ P_p[k] @ C.T)
        L = right_spd_solve(P_p[k] @ C.T, S)
        x_f[k] = x_pred + L @ (y[k] - C @ x_pred - D @ u[k])
        IL = I_n - L @ C
        P_f[k] = symmetrize(IL @ P_p[k] @ IL.T + L @ R @ L.T)
    x_s, P_s = x_f.copy(), P_f.copy()
    for k in range(K - 2, 0, -1):
        A, B, Q = model.A_at(k), model.B_at(k), model.Q_at(k)
        gain = right_spd_solve(P_f[k] @ A.T, P_p[k + 1])
        correction = (I_n - gain @ A) @ P_f[k] @ A.T @ np.linalg.solve(Q, B @ u[k])
        x_s[k] = x_f[k] + gain @ (x_s[k + 1] - A @ x_f[k]) - correction
        P_s[k] = symmetrize(P_f[k] + gain @ (P_s[k + 1] - P_p[k + 1]) @ gain.T)
    return x_s, P_s


def _bp(model, measurements, epsilon, group, **solver_opts) -> SolverReport:
    start = time.perf_counter()
    stacked = build_stacked_system(model, measurements)
    reduced = reduce_and_whiten(stacked)
    eps = epsilon_default(reduced.R) if epsilon is None else float(epsilon)
    u_stacked, info = bpdn_solve(reduced.Gamma_bar, reduced.y_bar, eps,
                                 mode="group" if group else "l1",
                                 group_shape=(model.K, model.m) if group else None,
                                 return_info=True, **solver_opts)
    x1, P1 = wls_initial_state(stacked, u_stacked, return_cov=True)
    u = u_stacked.reshape(model.K, model.m)
    x, _ = known_input_smoother(model, measurements, u, x1, P1)
    report = SolverReport(x=x, u=u, iterations=info["iterations"], converged=info["converged"])
    report.extra.update(epsilon=eps, rank=reduced.R, reduced=reduced)
    report.runtime_s = time.perf_counter() - start
    return report


def bp_rks(model: LdsModel, measurements, epsilon: float | None = None, **solver_opts) -> SolverReport:
    """Inputs by basis pursuit denoising, then x_1 by WLS and states by smoothing.

    ``epsilon`` defaults to :func:`epsilon_default` of the reduced rank.
    """
    return _bp(model, measurements, epsilon, group=False, **solver_opts)


def group_bp_rks(model: LdsModel, measurements, epsilon: float | None = None,
                 **solver_opts) -> SolverReport:
    """Group variant of :func:`bp_rks` for inputs sharing one support."""
    return _bp(model, measurements, epsilon, group=True, **solver_opts)

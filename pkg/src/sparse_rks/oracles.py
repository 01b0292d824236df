"""Reference posteriors by dense joint-Gaussian conditioning.

These builders express every latent quantity and every measurement as a
linear map of independent zero-mean Gaussian sources, form the joint
covariance, and condition on the observed values. They do not share code
with the recursive estimators and are meant for small problems only.
"""
from __future__ import annotations

import numpy as np

from ._linalg import symmetrize
from .model import LdsModel


class LinearGaussian:
    """Bookkeeping for variables that are linear in independent sources."""

    def __init__(self):
        self._covs: list[np.ndarray] = []

    def source(self, cov) -> dict:
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self._covs.append(cov)
        return {len(self._covs) - 1: np.eye(cov.shape[0])}

    @staticmethod
    def combine(*terms) -> dict:
        """Sum of (matrix, variable) products; a variable is a dict source->coef."""
        out: dict = {}
        for mat, var in terms:
            for sid, coef in var.items():
                contrib = mat @ coef
                out[sid] = out[sid] + contrib if sid in out else contrib
        return out

    def dense(self, variables) -> np.ndarray:
        """Stack variables into one coefficient matrix over all sources."""
        sizes = [c.shape[0] for c in self._covs]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        rows = []
        for var in variables:
            dim = next(iter(var.values())).shape[0]
            row = np.zeros((dim, offsets[-1]))
            for sid, coef in var.items():
                row[:, offsets[sid]:offsets[sid + 1]] = coef
            rows.append(row)
        return np.vstack(rows)

    def condition(self, latent, observed, values):
        """Posterior mean and covariance of ``latent`` given ``observed`` = ``values``."""
        from scipy.linalg import block_diag

        Sigma = block_diag(*self._covs)
        Lmap = self.dense(latent)
        Omap = self.dense(observed)
        S_oo = symmetrize(Omap @ Sigma @ Omap.T)
        S_lo = Lmap @ Sigma @ Omap.T
        S_ll = Lmap @ Sigma @ Lmap.T
        gain = np.linalg.solve(S_oo, S_lo.T).T
        mean = gain @ np.concatenate([np.ravel(v) for v in values])
        cov = symmetrize(S_ll - gain @ S_lo.T)
        return mean, cov


def direct_sbl_posterior(model: LdsModel, measurements, gamma, P0=None):
    """Posterior of xi_k = [x_k; u_k] under u_k ~ N(0, diag(gamma_k)).

    xi_0 ~ N(0, P0) (identity by default) with no process noise into the
    first state. Returns ``(means (K, n+m), covariances (K, n+m, n+m))``.
    """
    y = model.check_measurements(measurements)
    n, m, K = model.n, model.m, model.K
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (K, m))
    lg = LinearGaussian()
    xi0 = lg.source(np.eye(n + m) if P0 is None else P0)
    x0, u0 = {s: c[:n] for s, c in xi0.items()}, {s: c[n:] for s, c in xi0.items()}
    xs, us, ys = [], [], []
    x_prev, u_prev = x0, u0
    for k in range(K):
        j = max(k - 1, 0)
        terms = [(model.A_at(j), x_prev), (model.B_at(j), u_prev)]
        if k > 0:
            terms.append((np.eye(n), lg.source(model.Q_at(j))))
        x_k = lg.combine(*terms)
        u_k = lg.source(np.diag(gamma[k]))
        y_k = lg.combine((model.C_at(k), x_k), (model.D_at(k), u_k),
                         (np.eye(model.p), lg.source(model.R_at(k))))
        xs.append(x_k)
        us.append(u_k)
        ys.append(y_k)
        x_prev, u_prev = x_k, u_k
    latent = [v for k in range(K) for v in (xs[k], us[k])]
    mean, cov = lg.condition(latent, ys, y)
    means, covs = [], []
    d = n + m
    for k in range(K):
        sl = slice(k * d, (k + 1) * d)
        means.append(mean[sl])
        covs.append(cov[sl, sl])
    return np.array(means), np.array(covs)


def state_only_sbl_posterior(model: LdsModel, measurements, input_var):
    """Posterior of [x_k; u_{k-1}] for y_k = C x_k + v_k.

    x_0 ~ N(0, I); u_{k-1} ~ N(0, diag(input_var[k-1])) for k = 1..K, the
    first transition reusing A, B, Q of the first step.
    """
    y = model.check_measurements(measurements)
    n, m, K = model.n, model.m, model.K
    input_var = np.broadcast_to(np.asarray(input_var, dtype=float), (K, m))
    lg = LinearGaussian()
    x_prev = lg.source(np.eye(n))
    latent, ys = [], []
    for k in range(K):
        j = max(k - 1, 0)
        u_prev = lg.source(np.diag(input_var[k]))
        x_k = lg.combine((model.A_at(j), x_prev), (model.B_at(j), u_prev),
                         (np.eye(n), lg.source(model.Q_at(j))))
        ys.append(lg.combine((model.C_at(k), x_k), (np.eye(model.p), lg.source(model.R_at(k)))))
        latent.extend([x_k, u_prev])
        x_prev = x_k
    mean, cov = lg.condition(latent, ys, y)
    d = n + m
    return (np.array([mean[k * d:(k + 1) * d] for k in range(K)]),
            np.array([cov[k * d:(k + 1) * d, k * d:(k + 1) * d] for k in range(K)]))


def vb_gaussian_posterior(model: LdsModel, measurements, beta, drop_terminal_coupling=False):
    """Exact posterior means of (x, u) in the model targeted by the VB updates.

    x_1 ~ N(0, Q), u_k ~ N(0, diag(1 / beta_k)), the usual dynamics and,
    unless ``drop_terminal_coupling``, a final transition to x_{K+1}
    observed to equal zero. Returns ``(x (K, n), u (K, m))``.
    """
    y = model.check_measurements(measurements)
    n, m, K = model.n, model.m, model.K
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (K, m))
    lg = LinearGaussian()
    x_k = lg.source(model.Q_at(0))
    xs, us, obs, values = [], [], [], []
    for k in range(K):
        u_k = lg.source(np.diag(1.0 / beta[k]))
        obs.append(lg.combine((model.C_at(k), x_k), (model.D_at(k), u_k),
                              (np.eye(model.p), lg.source(model.R_at(k)))))
        values.append(y[k])
        xs.append(x_k)
        us.append(u_k)
        if k < K - 1 or not drop_terminal_coupling:
            x_next = lg.combine((model.A_at(k), x_k), (model.B_at(k), u_k),
                                (np.eye(n), lg.source(model.Q_at(k))))
            if k == K - 1:
                obs.append(x_next)
                values.append(np.zeros(n))
            x_k = x_next
    mean, _ = lg.condition(xs + us, obs, values)
    return mean[:K * n].reshape(K, n), mean[K * n:].reshape(K, m)

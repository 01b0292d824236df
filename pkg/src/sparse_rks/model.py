"""Linear dynamical system with sparse inputs: model container and simulator.

The system is

    x_{k+1} = A_k x_k + B_k u_k + w_k,    w_k ~ N(0, Q_k)
    y_k     = C_k x_k + D_k u_k + v_k,    v_k ~ N(0, R_k)

for k = 1..K. Time is 0-based in all arrays: row ``k`` of a (K, n) state
array holds x_{k+1}.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch

SUPPORT_MODES = ("time_varying", "joint")


def _as_stack(value, name: str) -> np.ndarray:
    """Coerce a matrix or a per-step list of matrices to a (T, r, c) array."""
    if isinstance(value, (list, tuple)):
        arr = np.stack([np.atleast_2d(np.asarray(v, dtype=float)) for v in value])
    else:
        arr = np.asarray(value, dtype=float)
        if arr.ndim < 2:
            arr = np.atleast_2d(arr)
        if arr.ndim == 2:
            arr = arr[None]
    if arr.ndim != 3:
        raise DimensionMismatch(f"{name} must be a matrix or a list of matrices")
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LdsModel:
    """Immutable container for the system matrices and noise covariances.

    Each matrix may be given once (time-invariant, broadcast over all steps)
    or as a list of K per-step matrices. Covariances must be symmetric
    positive definite.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    K: int

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValueError("horizon K must be positive")
        object.__setattr__(self, "K", int(self.K))
        for name in ("A", "B", "C", "D", "Q", "R"):
            stack = _as_stack(getattr(self, name), name)
            if stack.shape[0] not in (1, self.K):
                raise DimensionMismatch(
                    f"{name} has {stack.shape[0]} steps, expected 1 or {self.K}")
            object.__setattr__(self, name, stack)
        n, m, p = self.A.shape[1], self.B.shape[2], self.C.shape[1]
        expected = {"A": (n, n), "B": (n, m), "C": (p, n), "D": (p, m),
                    "Q": (n, n), "R": (p, p)}
        for name, shape in expected.items():
            if getattr(self, name).shape[1:] != shape:
                raise DimensionMismatch(
                    f"{name} has shape {getattr(self, name).shape[1:]}, expected {shape}")
        for name in ("Q", "R"):
            stack = getattr(self, name)
            asym = np.abs(stack - stack.transpose(0, 2, 1)).max(axis=(1, 2))
            scale = np.maximum(1.0, np.abs(stack).max(axis=(1, 2)))
            if np.any(asym > 1e-12 * scale + 1e-12 * np.abs(stack).max(axis=(1, 2))):
                raise ValueError(f"{name} must be symmetric")
            try:
                np.linalg.cholesky(stack)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} must be positive definite") from None

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]

    @property
    def p(self) -> int:
        return self.C.shape[1]

    @property
    def time_invariant(self) -> bool:
        return all(getattr(self, nm).shape[0] == 1 for nm in ("A", "B", "C", "D", "Q", "R"))

    def _at(self, stack: np.ndarray, k: int) -> np.ndarray:
        if not 0 <= k < self.K:
            raise IndexError(f"step {k} outside 0..{self.K - 1}")
        return stack[0] if stack.shape[0] == 1 else stack[k]

    def A_at(self, k: int) -> np.ndarray:
        return self._at(self.A, k)

    def B_at(self, k: int) -> np.ndarray:
        return self._at(self.B, k)

    def C_at(self, k: int) -> np.ndarray:
        return self._at(self.C, k)

    def D_at(self, k: int) -> np.ndarray:
        return self._at(self.D, k)

    def Q_at(self, k: int) -> np.ndarray:
        return self._at(self.Q, k)

    def R_at(self, k: int) -> np.ndarray:
        return self._at(self.R, k)

    def replace(self, **changes) -> "LdsModel":
        fields = {nm: getattr(self, nm) for nm in ("A", "B", "C", "D", "Q", "R", "K")}
        fields.update(changes)
        return LdsModel(**fields)

    def check_measurements(self, y) -> np.ndarray:
        """Validate and return measurements as a (K, p) float array."""
        y = np.asarray(y, dtype=float)
        if y.ndim == 1 and self.p == 1:
            y = y[:, None]
        if y.shape != (self.K, self.p):
            raise DimensionMismatch(f"measurements have shape {y.shape}, expected {(self.K, self.p)}")
        return y


@dataclass(frozen=True)
class SparseTrajectory:
    """One simulated realization together with its noise draws."""

    x: np.ndarray          # (K, n)
    u: np.ndarray          # (K, m)
    y: np.ndarray          # (K, p)
    w: np.ndarray          # (K-1, n), process noise driving x_2..x_K
    v: np.ndarray          # (K, p)
    supports: tuple = field(default_factory=tuple)
    sigma_u: float = 1.0
    sigma_v: float = 1.0
    seed: int | None = None

    @property
    def K(self) -> int:
        return self.x.shape[0]


def _positive_dims(**dims):
    for name, val in dims.items():
        if int(val) < 1:
            raise ValueError(f"{name} must be positive, got {val}")


def build_random_system(n: int, m: int, p: int, K: int, seed: int,
                        sigma_v: float = 1.0) -> LdsModel:
    """Draw a time-invariant system with i.i.d. standard normal A, B, C, D.

    Q is the identity and R = sigma_v**2 I. A and B depend only on ``seed``
    and ``(n, m)``; rows of C and D are drawn from their own streams, so a
    larger ``p`` extends the smaller-``p`` matrices row-wise.
    """
    _positive_dims(n=n, m=m, p=p, K=K)
    if sigma_v <= 0:
        raise ValueError("sigma_v must be positive")
    streams = np.random.SeedSequence(seed).spawn(4)
    rng_a, rng_b, rng_c, rng_d = (np.random.default_rng(s) for s in streams)
    A = rng_a.standard_normal((n, n))
    B = rng_b.standard_normal((n, m))
    C = rng_c.standard_normal((p, n))
    D = rng_d.standard_normal((p, m))
    return LdsModel(A=A, B=B, C=C, D=D, Q=np.eye(n), R=sigma_v ** 2 * np.eye(p), K=K)


def generate_sparse_inputs(m: int, K: int, s: int, sigma_u: float,
                           support_mode: str = "time_varying", seed=None):
    """Draw K input vectors with exactly ``s`` nonzeros each.

    Returns
    -------
    inputs : ndarray, shape (K, m)
    supports : tuple of sorted index arrays, one per step
    """
    if s < 0 or s > m:
        raise ValueError(f"sparsity s={s} must lie in 0..m={m}")
    if support_mode not in SUPPORT_MODES:
        raise ValueError(f"unknown support mode {support_mode!r}")
    rng = np.random.default_rng(seed)
    u = np.zeros((K, m))
    supports = []
    shared = np.sort(rng.choice(m, size=s, replace=False))
    for k in range(K):
        supp = shared if support_mode == "joint" else np.sort(rng.choice(m, size=s, replace=False))
        u[k, supp] = sigma_u * rng.standard_normal(s)
        supports.append(supp)
    return u, tuple(supports)


def snr_to_sigma_v(snr_db: float, s: int, sigma_u: float) -> float:
    """Measurement noise level giving SNR = s sigma_u^2 / sigma_v^2."""
    if not np.isfinite(snr_db) or s < 1 or sigma_u <= 0:
        raise ValueError("need finite snr_db, s >= 1 and sigma_u > 0")
    return float(np.sqrt(s * sigma_u ** 2 / 10.0 ** (snr_db / 10.0)))


def replay(model: LdsModel, u, x1, w, v):
    """Propagate the system with given inputs and noise; returns (x, y)."""
    u = np.asarray(u, dtype=float).reshape(model.K, model.m)
    x = np.zeros((model.K, model.n))
    x[0] = np.asarray(x1, dtype=float).reshape(model.n)
    for k in range(model.K - 1):
        x[k + 1] = model.A_at(k) @ x[k] + model.B_at(k) @ u[k] + w[k]
    y = np.stack([model.C_at(k) @ x[k] + model.D_at(k) @ u[k] + v[k] for k in range(model.K)])
    return x, y


def simulate(model: LdsModel, inputs, x1=None, seed=None, noise: bool = True,
             supports: Sequence | None = None, sigma_u: float = 1.0) -> SparseTrajectory:
    """Simulate the model, recording all noise draws.

    ``x1`` defaults to a standard normal draw. With ``noise=False`` the noise
    realizations are exactly zero; the model's covariances are untouched.
    """
    u = np.asarray(inputs, dtype=float)
    if u.shape != (model.K, model.m):
        raise DimensionMismatch(f"inputs have shape {u.shape}, expected {(model.K, model.m)}")
    rng = np.random.default_rng(seed)
    if x1 is None:
        x1 = rng.standard_normal(model.n)
    x1 = np.asarray(x1, dtype=float).reshape(-1)
    if x1.shape != (model.n,):
        raise DimensionMismatch(f"x1 has length {x1.size}, expected {model.n}")
    w = np.zeros((model.K - 1, model.n))
    v = np.zeros((model.K, model.p))
    if noise:
        for k in range(model.K - 1):
            w[k] = np.linalg.cholesky(model.Q_at(k)) @ rng.standard_normal(model.n)
        for k in range(model.K):
            v[k] = np.linalg.cholesky(model.R_at(k)) @ rng.standard_normal(model.p)
    x, y = replay(model, u, x1, w, v)
    if supports is None:
        supports = tuple(np.flatnonzero(row) for row in u)
    sigma_v = float(np.sqrt(model.R_at(0)[0, 0]))
    return SparseTrajectory(x=x, u=u, y=y, w=w, v=v, supports=tuple(supports),
                            sigma_u=sigma_u, sigma_v=sigma_v, seed=seed)

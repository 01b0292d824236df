"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line (also collected into the pytest
terminal summary) before asserting. Run with ``pytest tests/test_acceptance.py -v -s``.
"""
import time

import numpy as np
import pytest

from sparse_rks.bayesian import (msbl_rks, sbl_estep, sbl_rks, sbl_rks_state_meas, vb_rks)
from sparse_rks.bench.config import config_from_string
from sparse_rks.bench.metrics import support_recovered
from sparse_rks.bench.phase import p_min_or_inf, phase_transition
from sparse_rks.bench.runner import mean_rows, run_benchmark
from sparse_rks.bp import bp_rks, build_stacked_system, epsilon_default, reduce_and_whiten
from sparse_rks.model import build_random_system, generate_sparse_inputs, simulate, snr_to_sigma_v
from sparse_rks.oracles import direct_sbl_posterior, state_only_sbl_posterior, vb_gaussian_posterior
from sparse_rks.regularized import l1_rks, reweighted_l2_rks, tau_grid
from sparse_rks.rks import (batch_map_oracle, kalman_smoother, rks_smooth, rks_smooth_state_only,
                            state_only_pass)

from conftest import ACCEPTANCE_LINES, study_instance, random_instance, random_model

pytestmark = pytest.mark.acceptance


def verdict(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2} ({title}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)


def rel_err(a, b):
    return np.abs(a - b).max() / max(1.0, np.abs(b).max())


def small_oracle_instances():
    """Twenty-four random instances with n, m <= 5, p >= m + 1 and K <= 10."""
    for seed in range(24):
        rng = np.random.default_rng(seed)
        n, m = (int(v) for v in rng.integers(1, 6, size=2))
        p = m + int(rng.integers(1, 4))
        K = int(rng.integers(2, 11))
        yield random_instance(seed, n, m, p, K, time_varying=bool(seed % 2))


STUDY_CONFIG = """
[experiment]
n = 10
m = 40
K = 10
s = 3
p = {p}
snr_db = 20
sigma_u = 5
support_mode = {mode}
trials = 50
seed = {seed}
"""


def test_smoother_matches_batch_oracle():
    start = time.perf_counter()
    worst, count = 0.0, 0
    for model, traj in small_oracle_instances():
        result = rks_smooth(model, traj.y)
        oracle = batch_map_oracle(model, traj.y)
        worst = max(worst, rel_err(result.xi, oracle.xi))
        count += 1
    elapsed = time.perf_counter() - start
    passed = count >= 20 and worst < 1e-8 and elapsed < 5.0
    verdict(1, "smoother vs batch MAP", passed,
            f"{count} instances, max rel err {worst:.2e}, {elapsed:.2f} s")
    assert passed


def test_gain_identities():
    worst_j, worst_g = 0.0, 0.0
    for model, traj in small_oracle_instances():
        errors = rks_smooth(model, traj.y, diagnostics=True).flags["gain_identity_errors"]
        worst_j = max(worst_j, errors[:, 0].max())
        worst_g = max(worst_g, errors[:, 1].max())
    passed = worst_j < 1e-10 and worst_g < 1e-10
    verdict(2, "gain identities", passed, f"max |JD - I| {worst_j:.2e}, max |GD - [0; I]| {worst_g:.2e}")
    assert passed


def test_em_loglik_monotone():
    start = time.perf_counter()
    worst_drop = 0.0
    for seed in range(10):
        model, traj = study_instance(100 + seed, p=12)
        ll = np.array(sbl_rks(model, traj.y, r_max=100).trace["loglik"])
        slack = 1e-6 * np.abs(ll[1:])
        worst_drop = max(worst_drop, float(np.max((ll[:-1] - ll[1:]) / (slack + 1e-300))))
    elapsed = time.perf_counter() - start
    passed = worst_drop <= 1.0 and elapsed < 60.0
    verdict(3, "EM monotonicity", passed,
            f"worst decrease {worst_drop:.3g} x slack over 10 seeds, {elapsed:.1f} s")
    assert passed


def test_frozen_hyperparameters_match_dense_posterior():
    n, m, p, K = 10, 40, 12, 6
    model, traj = random_instance(7, n, m, p, K)
    gamma = np.random.default_rng(7).uniform(0.1, 5.0, size=(K, m))
    result = sbl_estep(model, traj.y, gamma)
    mean, _ = direct_sbl_posterior(model, traj.y, gamma)
    sbl_err = rel_err(result.xi, mean)

    vb_err = 0.0
    for drop in (False, True):
        vb_model = random_model(1, 2, 3, 3, 4, noise_scale=1.0)
        y = np.random.default_rng(1).standard_normal((4, 3))
        beta = np.random.default_rng(2).uniform(0.5, 3.0, size=(4, 3))
        report = vb_rks(vb_model, y, r_max=400, update_beta=False, beta_init=beta,
                        drop_terminal_coupling=drop)
        x, u = vb_gaussian_posterior(vb_model, y, beta, drop_terminal_coupling=drop)
        vb_err = max(vb_err, rel_err(report.x, x), rel_err(report.u, u))
    passed = K * (n + m) <= 300 and sbl_err < 1e-6 and vb_err < 1e-6
    verdict(4, "frozen hyperparameters", passed,
            f"SBL E-step rel err {sbl_err:.2e} (K(n+m) = {K * (n + m)}), VB rel err {vb_err:.2e}")
    assert passed


def test_sparse_estimators_beat_ridge():
    text = (STUDY_CONFIG.format(p=12, mode="time_varying", seed=11)
            + "[algo.ridge]\n[algo.sbl]\n[algo.l1]\ntau = grid\n")
    start = time.perf_counter()
    means = {r.algo: r for r in mean_rows(run_benchmark(config_from_string(text)))}
    elapsed = time.perf_counter() - start
    ridge, sbl, l1 = means["ridge"], means["sbl"], means["l1"]
    passed = (sbl.nmse_input <= 0.5 * ridge.nmse_input and l1.nmse_input <= 0.5 * ridge.nmse_input
              and sbl.fsrr < l1.fsrr and elapsed < 600.0)
    verdict(5, "low-dimensional regime", passed,
            f"input NMSE ridge {ridge.nmse_input:.3g}, sbl {sbl.nmse_input:.3g}, l1 {l1.nmse_input:.3g}; "
            f"FSRR sbl {sbl.fsrr:.4f}, l1 {l1.fsrr:.4f}; {elapsed:.0f} s")
    assert passed


def test_joint_sparsity_gain():
    text = (STUDY_CONFIG.format(p=10, mode="joint", seed=12)
            + "[algo.sbl]\n[algo.msbl]\n[algo.l1]\ntau = grid\n[algo.group_l1]\ntau = grid\n")
    means = {r.algo: r.nmse_input for r in mean_rows(run_benchmark(config_from_string(text)))}
    passed = means["msbl"] <= means["sbl"] and means["group_l1"] <= means["l1"]
    verdict(6, "joint sparsity", passed,
            f"input NMSE msbl {means['msbl']:.3g} vs sbl {means['sbl']:.3g}, "
            f"group_l1 {means['group_l1']:.3g} vs l1 {means['l1']:.3g}")
    assert passed


PHASE = """
[experiment]
n = 10
m = 40
K = 10
s = 2
p = 4
snr_db = 20
sigma_u = 5
support_mode = joint
trials = 20
seed = 7

[phase]
s = 2, 4, 6
p = 4:40:4
threshold = 0.05
success_rate = 0.9

[algo.msbl]
r_max = 50

[algo.sbl]
r_max = 50

[algo.l1]
tau = 0.1x
r_max = 100
"""


def test_phase_transition_ordering():
    start = time.perf_counter()
    points = phase_transition(config_from_string(PHASE))
    elapsed = time.perf_counter() - start
    parts, passed = [], True
    for s in (2, 4, 6):
        msbl, sbl, l1 = (p_min_or_inf(points, algo, s) for algo in ("msbl", "sbl", "l1"))
        passed &= msbl <= sbl <= l1
        parts.append(f"s={s}: {msbl:g}/{sbl:g}/{l1:g}")
    verdict(7, "phase transition", passed,
            "p_min msbl/sbl/l1 " + ", ".join(parts) + f"; {elapsed:.0f} s")
    assert passed


def _best_time(run, repeats=5):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        report = run()
        best = min(best, time.perf_counter() - start)
    return best, report.iterations


def test_runtime_ordering():
    model, traj = study_instance(0, p=12)
    sigma_v = snr_to_sigma_v(20.0, 3, 5.0)
    tau = tau_grid(sigma_v, model.m)[1]
    runs = {
        "sbl": lambda: sbl_rks(model, traj.y, r_max=30, eps_thres=0.0),
        "l1": lambda: l1_rks(model, traj.y, tau, r_max=30, sigma_u=0.0),
        "reweighted_l2": lambda: reweighted_l2_rks(model, traj.y, tau, r_max=30, sigma_u=0.0),
        "vb": lambda: vb_rks(model, traj.y, r_max=30),
    }
    times, iterations = {}, {}
    for name, run in runs.items():
        times[name], iterations[name] = _best_time(run)
    others = [times[k] for k in ("sbl", "l1", "reweighted_l2")]
    passed = (all(it == 30 for it in iterations.values())
              and times["sbl"] < times["l1"] and times["sbl"] < times["reweighted_l2"]
              and times["vb"] > max(others))
    verdict(8, "runtime ordering", passed,
            ", ".join(f"{k} {v * 1e3:.0f} ms" for k, v in times.items()))
    assert passed


def test_basis_pursuit_reduction():
    model = random_model(3, 3, 4, 2, 5)
    rng = np.random.default_rng(0)
    y = rng.standard_normal((5, 2))
    u, x1 = rng.standard_normal((5, 4)), rng.standard_normal(3)
    w, v = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
    stacked = build_stacked_system(model, y)
    reduced = reduce_and_whiten(stacked)
    Pi = reduced.Pi
    idempotence = np.abs(Pi @ Pi - Pi).max()
    annihilation = np.abs(Pi @ stacked.O).max()

    # stacked identity on a noisy trajectory of the same model
    x = np.zeros((5, 3))
    x[0] = x1
    rows = []
    for k in range(5):
        rows.append(model.C_at(k) @ x[k] + model.D_at(k) @ u[k] + v[k])
        if k < 4:
            x[k + 1] = model.A_at(k) @ x[k] + model.B_at(k) @ u[k] + w[k]
    rebuilt = stacked.O @ x1 + stacked.Gamma @ u.ravel() + stacked.M @ w[:4].ravel() + v.ravel()
    identity = np.abs(rebuilt - np.concatenate(rows)).max()

    draws = 100_000
    chol_q, chol_r = np.linalg.cholesky(model.Q_at(0)), np.linalg.cholesky(model.R_at(0))
    w_draws = (rng.standard_normal((draws, 4, 3)) @ chol_q.T).reshape(draws, -1)
    v_draws = (rng.standard_normal((draws, 5, 2)) @ chol_r.T).reshape(draws, -1)
    noise = reduced.transform((w_draws @ stacked.M.T + v_draws).T).T
    cov = noise.T @ noise / draws
    eye = np.eye(reduced.R)
    whitening = np.linalg.norm(cov - eye) / np.linalg.norm(eye)

    eps_err = max(abs(epsilon_default(R) - expected) for R, expected in
                  [(2, 4.242640687119285), (8, 5.656854249492381), (100, 12.82842712474619)])
    passed = (idempotence < 1e-10 and annihilation < 1e-10 and identity < 1e-10
              and whitening < 0.02 and eps_err < 1e-9)
    verdict(9, "basis pursuit reduction", passed,
            f"|PiPi - Pi| {idempotence:.1e}, |Pi O| {annihilation:.1e}, identity {identity:.1e}, "
            f"whitened cov rel Frobenius {whitening:.4f}, epsilon err {eps_err:.1e}")
    assert passed


def near_noiseless_instance(seed, p=24):
    n, m, K, s, sigma_u = 10, 40, 10, 3, 5.0
    model = build_random_system(n, m, p, K, seed, sigma_v=1e-4)
    model = model.replace(Q=1e-8 * np.eye(n))
    u, supports = generate_sparse_inputs(m, K, s, sigma_u, "time_varying", seed=seed + 1)
    traj = simulate(model, u, seed=seed + 2, noise=False, supports=supports, sigma_u=sigma_u)
    return model, traj


def test_noiseless_support_recovery():
    tol = 1e-3 * 5.0
    hits = {"bp": 0, "sbl": 0}
    ranks = []
    for seed in range(10):
        model, traj = near_noiseless_instance(seed)
        bp = bp_rks(model, traj.y)
        ranks.append(bp.extra["rank"])
        hits["bp"] += support_recovered(traj.u, bp.u, tol)
        hits["sbl"] += support_recovered(traj.u, sbl_rks(model, traj.y, r_max=100).u, tol)
    needed = 4 * 3 * np.log(10 * 40)
    passed = min(ranks) >= needed and hits["bp"] >= 9 and hits["sbl"] >= 9
    verdict(10, "noiseless recovery", passed,
            f"bp {hits['bp']}/10, sbl {hits['sbl']}/10, rank {min(ranks)} >= {needed:.0f}")
    assert passed


def test_state_only_variants():
    model = random_model(2, 3, 2, 2, 7).replace(B=np.zeros((3, 2)))
    y = np.random.default_rng(0).standard_normal((7, 2))
    A = model.A_at(0)
    ks = kalman_smoother(model, y, x1_cov=A @ A.T + model.Q_at(0), use_feedthrough=False)
    rks_degenerate = rel_err(rks_smooth_state_only(model, y).x, ks["x"])

    meas_model = random_model(7, 3, 2, 2, 6).replace(B=np.zeros((3, 2)), D=np.zeros((2, 2)))
    y_meas = np.random.default_rng(0).standard_normal((6, 2))
    A_meas = meas_model.A_at(0)
    ks_meas = kalman_smoother(meas_model, y_meas, x1_cov=A_meas @ A_meas.T + meas_model.Q_at(0),
                              use_feedthrough=False)
    sbl_degenerate = rel_err(sbl_rks_state_meas(meas_model, y_meas, r_max=3).x, ks_meas["x"])

    rks_oracle = 0.0
    for seed in range(5):
        inst_model, traj = random_instance(seed, 3, 2, 4, 4)
        result = rks_smooth_state_only(inst_model, traj.y)
        oracle = batch_map_oracle(inst_model, traj.y, mode="state_only")
        rks_oracle = max(rks_oracle, rel_err(result.xi, oracle.xi))

    sbl_oracle = 0.0
    for seed in range(5):
        inst_model = random_model(6 + seed, 3, 2, 3, 5).replace(D=np.zeros((3, 2)))
        y_inst = np.random.default_rng(seed).standard_normal((5, 3))
        var = np.random.default_rng(seed + 1).uniform(0.2, 2.0, size=(5, 2))
        result = state_only_pass(inst_model, y_inst, input_var=var)
        mean, _ = state_only_sbl_posterior(inst_model, y_inst, var)
        sbl_oracle = max(sbl_oracle, rel_err(result.xi, mean))

    passed = (rks_degenerate < 1e-8 and sbl_degenerate < 1e-8
              and rks_oracle < 1e-6 and sbl_oracle < 1e-6)
    verdict(11, "state-only variants", passed,
            f"B=0 vs classical smoother: rks {rks_degenerate:.1e}, sbl {sbl_degenerate:.1e}; "
            f"oracle: rks {rks_oracle:.1e}, sbl {sbl_oracle:.1e}")
    assert passed


def _sbl_time_per_iteration(n, m, p=12, K=10, repeats=3, iterations=4):
    model = build_random_system(n, m, p, K, seed=0, sigma_v=0.5)
    model = model.replace(A=model.A / np.sqrt(n))
    u, supports = generate_sparse_inputs(m, K, 3, 5.0, "time_varying", seed=1)
    traj = simulate(model, u, seed=2, supports=supports, sigma_u=5.0)
    best = np.inf
    for _ in range(repeats):
        report = sbl_rks(model, traj.y, r_max=iterations, eps_thres=0.0)
        best = min(best, report.runtime_s / report.iterations)
    return best


def test_sbl_iteration_scaling():
    small = _sbl_time_per_iteration(40, 160)
    large = _sbl_time_per_iteration(80, 320)
    ratio = large / small
    passed = 4.0 <= ratio <= 12.0
    verdict(12, "complexity scaling", passed,
            f"SBL per-iteration {small * 1e3:.1f} ms at (40, 160), {large * 1e3:.1f} ms at (80, 320), "
            f"ratio {ratio:.2f}")
    assert passed

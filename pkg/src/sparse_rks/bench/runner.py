"""Benchmark orchestration: matched data, estimator dispatch, CSV records."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .. import bayesian, bp, regularized, rks
from ..errors import ZeroReference
from ..model import build_random_system, generate_sparse_inputs, simulate, snr_to_sigma_v
from ..report import SolverReport
from .config import AlgorithmSpec, ExperimentConfig, TauSetting
from .metrics import fsrr, nmse, to_db

CSV_COLUMNS = ("algo", "p", "n", "m", "K", "s", "snr_db", "seed", "nmse_state", "nmse_input",
               "nmse_state_db", "nmse_input_db", "fsrr", "runtime_s", "iters", "status")
MEAN_STATUS = "mean"


@dataclass
class MetricsRecord:
    """One CSV row: a single trial, or a trial average when ``status`` starts with "mean"."""

    algo: str
    p: int
    n: int
    m: int
    K: int
    s: int
    snr_db: float
    seed: int
    nmse_state: float
    nmse_input: float
    nmse_state_db: float
    nmse_input_db: float
    fsrr: float
    runtime_s: float
    iters: float
    status: str

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def is_mean(self) -> bool:
        return self.status.startswith(MEAN_STATUS)


@dataclass(frozen=True)
class TrialData:
    model: object
    trajectory: object
    sigma_v: float
    seed: int


def derive_seed(*keys: int) -> int:
    """Stable 63-bit seed from a tuple of integers."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def noise_level(config: ExperimentConfig, s: int | None = None) -> float:
    if config.sigma_v is not None:
        return config.sigma_v
    s = config.s if s is None else s
    if s == 0:
        return 1.0
    return snr_to_sigma_v(config.snr_db, s, config.sigma_u)


def make_trial(config: ExperimentConfig, p: int, trial: int, s: int | None = None,
               stream: int = 0) -> TrialData:
    """Data for one (p, trial) pair, independent of which estimator consumes it.

    A, B, x_1 and the inputs depend on (seed, trial[, stream]) only, so
    the same trial shares them across p; the rows of C and D for a
    smaller p are a prefix of those for a larger p. Noise draws depend on p.
    """
    s = config.s if s is None else s
    sigma_v = noise_level(config, s)
    system_seed = derive_seed(config.seed, stream, trial)
    model = build_random_system(config.n, config.m, p, config.K, system_seed, sigma_v=sigma_v)
    u, supports = generate_sparse_inputs(config.m, config.K, s, config.sigma_u,
                                         config.support_mode, derive_seed(config.seed, stream, trial, 1))
    x1 = np.random.default_rng(derive_seed(config.seed, stream, trial, 2)).standard_normal(config.n)
    traj = simulate(model, u, x1=x1, seed=derive_seed(config.seed, stream, trial, 3, p),
                    noise=config.noise, supports=supports, sigma_u=config.sigma_u)
    return TrialData(model=model, trajectory=traj, sigma_v=sigma_v, seed=system_seed)


def _resolve_tau(setting: TauSetting, sigma_v: float, m: int) -> list[float]:
    if setting.grid:
        return regularized.tau_grid(sigma_v, m)
    if setting.multiplier is not None:
        return [setting.multiplier * regularized.tau_grid(sigma_v, m)[1]]
    return [setting.value]


def run_estimator(spec: AlgorithmSpec, model, y, sigma_v: float, sigma_u: float = 1.0,
                  truth_u=None) -> SolverReport:
    """Run one estimator. A tau grid is resolved by the lowest input NMSE against ``truth_u``."""
    kind, params = spec.kind, dict(spec.params)
    if kind == "rks":
        start = time.perf_counter()
        result = rks.rks_smooth(model, y)
        return SolverReport(x=result.x, u=result.u, iterations=1, converged=True,
                            runtime_s=time.perf_counter() - start)
    if kind == "ridge":
        return regularized.ridge_rks(model, y, **params)
    if kind in ("l1", "group_l1", "reweighted_l2"):
        setting = params.pop("tau", TauSetting(multiplier=1.0))
        taus = _resolve_tau(setting, sigma_v, model.m)
        if len(taus) > 1 and truth_u is None:
            raise ValueError("a tau grid needs the true inputs for selection")
        solver = {"l1": regularized.l1_rks, "group_l1": regularized.group_l1_rks,
                  "reweighted_l2": regularized.reweighted_l2_rks}[kind]
        best, best_err, elapsed = None, math.inf, 0.0
        for tau in taus:
            report = solver(model, y, tau, sigma_u=sigma_u, **params)
            elapsed += report.runtime_s
            err = nmse(truth_u, report.u) if len(taus) > 1 else 0.0
            if best is None or err < best_err:
                best, best_err = report, err
        best.extra["tau_selected"] = best.extra["tau"][0]
        best.extra["runtime_grid_s"] = elapsed
        return best
    if kind in ("sbl", "msbl"):
        return (bayesian.sbl_rks if kind == "sbl" else bayesian.msbl_rks)(model, y, **params)
    if kind in ("vb", "mvb"):
        return (bayesian.vb_rks if kind == "vb" else bayesian.mvb_rks)(model, y, **params)
    if kind in ("bp", "group_bp"):
        return (bp.bp_rks if kind == "bp" else bp.group_bp_rks)(model, y, **params)
    raise ValueError(f"unknown algorithm kind {kind!r}")


def _safe_nmse(truth, est, scale: float):
    """NMSE; an all-zero reference is normalized by K * scale**2 instead."""
    try:
        return nmse(truth, est)
    except ZeroReference:
        return float(np.sum(np.asarray(est) ** 2)) / (len(truth) * scale ** 2)


def evaluate(spec: AlgorithmSpec, config: ExperimentConfig, data: TrialData, p: int) -> MetricsRecord:
    """Run ``spec`` on one trial; failures become rows tagged with the error class."""
    traj = data.trajectory
    base = dict(algo=spec.name, p=p, n=config.n, m=config.m, K=config.K, s=len(traj.supports[0]),
                snr_db=config.snr_db, seed=data.seed)
    try:
        report = run_estimator(spec, data.model, traj.y, data.sigma_v, config.sigma_u, traj.u)
        u_est = np.asarray(report.u)
        u_true = traj.u[:u_est.shape[0]]
        e_x = _safe_nmse(traj.x, report.x, 1.0)
        e_u = _safe_nmse(u_true, u_est, config.sigma_u)
        if not (np.isfinite(e_x) and np.isfinite(e_u)):
            raise FloatingPointError("non-finite estimate")
        return MetricsRecord(**base, nmse_state=e_x, nmse_input=e_u, nmse_state_db=to_db(e_x),
                             nmse_input_db=to_db(e_u),
                             fsrr=fsrr(u_true, u_est, config.sigma_u, traj.supports[:u_est.shape[0]]),
                             runtime_s=report.runtime_s if config.record_runtime else 0.0,
                             iters=report.iterations, status="ok")
    except Exception as exc:  # a failed trial must not abort the sweep
        nan = float("nan")
        return MetricsRecord(**base, nmse_state=nan, nmse_input=nan, nmse_state_db=nan,
                             nmse_input_db=nan, fsrr=nan, runtime_s=0.0, iters=0,
                             status=f"error:{type(exc).__name__}")


def average_records(rows: list[MetricsRecord], config: ExperimentConfig) -> MetricsRecord:
    """Mean over successful trials of one (algorithm, p) group; dB of the mean NMSE."""
    ok = [r for r in rows if r.ok]
    first = rows[0]
    def mean(attr):
        return float(np.mean([getattr(r, attr) for r in ok])) if ok else float("nan")
    e_x, e_u = mean("nmse_state"), mean("nmse_input")
    return MetricsRecord(algo=first.algo, p=first.p, n=first.n, m=first.m, K=first.K, s=first.s,
                         snr_db=first.snr_db, seed=config.seed, nmse_state=e_x, nmse_input=e_u,
                         nmse_state_db=to_db(e_x) if ok else float("nan"),
                         nmse_input_db=to_db(e_u) if ok else float("nan"), fsrr=mean("fsrr"),
                         runtime_s=mean("runtime_s"), iters=mean("iters"),
                         status=f"{MEAN_STATUS}:{len(ok)}/{len(rows)}")


def run_benchmark(config: ExperimentConfig, progress=None) -> list[MetricsRecord]:
    """Every (algorithm, p, trial) on matched data, followed by the per-(algorithm, p) means.

    Trial rows are ordered by (algorithm in config order, p, trial); the
    mean rows follow in the same (algorithm, p) order.
    """
    results = {}
    for p in config.p_values:
        for trial in range(config.trials):
            data = make_trial(config, p, trial)
            for spec in config.algorithms:
                results[(spec.name, p, trial)] = evaluate(spec, config, data, p)
                if progress is not None:
                    progress(results[(spec.name, p, trial)])
    rows, means = [], []
    for spec in config.algorithms:
        for p in config.p_values:
            group = [results[(spec.name, p, t)] for t in range(config.trials)]
            rows.extend(group)
            means.append(average_records(group, config))
    return rows + means


def mean_rows(records) -> list[MetricsRecord]:
    return [r for r in records if r.is_mean]


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow([_format(getattr(rec, col)) for col in CSV_COLUMNS])
    return buffer.getvalue()


def write_csv(records, path) -> None:
    Path(path).write_text(records_to_csv(records))


_FIELD_TYPES = {f.name: f.type for f in fields(MetricsRecord)}


def _parse_field(name: str, text: str):
    kind = _FIELD_TYPES[name]
    if kind == "str":
        return text
    if kind == "int":
        return int(text)
    if name == "iters" and text.lstrip("-").isdigit():
        return int(text)
    return float(text)


def records_from_csv(text: str) -> list[MetricsRecord]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    return [MetricsRecord(**{col: _parse_field(col, val) for col, val in zip(CSV_COLUMNS, row)})
            for row in reader if row]


def read_csv(path) -> list[MetricsRecord]:
    return records_from_csv(Path(path).read_text())


def records_equal(a: MetricsRecord, b: MetricsRecord) -> bool:
    """Field-wise equality that treats two NaNs as equal."""
    for key, val in asdict(a).items():
        other = getattr(b, key)
        if isinstance(val, float) and isinstance(other, float) and math.isnan(val) and math.isnan(other):
            continue
        if val != other:
            return False
    return True


def summary_table(records) -> str:
    """Human-readable table of the mean rows."""
    lines = [f"{'algo':<16}{'p':>4}{'NMSE x [dB]':>13}{'NMSE u [dB]':>13}{'FSRR':>8}"
             f"{'time [s]':>10}{'ok':>8}"]
    for r in mean_rows(records):
        lines.append(f"{r.algo:<16}{r.p:>4}{r.nmse_state_db:>13.2f}{r.nmse_input_db:>13.2f}"
                     f"{r.fsrr:>8.3f}{r.runtime_s:>10.3f}{r.status.split(':', 1)[1]:>8}")
    return "\n".join(lines)

"""Command-line interface: ``sparse-rks {simulate,estimate,benchmark,phase,fixtures}``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..fixtures import load_measurements, load_model, save_measurements, save_model, save_trajectory
from ..model import build_random_system, generate_sparse_inputs, simulate
from .config import ALGORITHM_KEYS, load_config, parse_algorithm
from .phase import phase_to_csv, phase_transition
from .runner import make_trial, records_to_csv, run_benchmark, run_estimator, summary_table

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _write(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _param(text: str):
    if "=" not in text:
        raise ConfigError(f"--param expects key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    p = args.p if args.p is not None else config.p_values[0]
    data = make_trial(config, p, args.trial)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.txt", data.model)
    save_trajectory(out / "trajectory.txt", data.trajectory)
    save_measurements(out / "measurements.txt", data.trajectory.y)
    print(f"wrote model.txt, trajectory.txt, measurements.txt to {out} "
          f"(n={config.n}, m={config.m}, p={p}, K={config.K}, trial={args.trial})")
    return EXIT_OK


def cmd_estimate(args) -> int:
    options = dict(_param(p) for p in args.param)
    spec = parse_algorithm(args.algo, options)
    if spec.params.get("tau") is not None and spec.params["tau"].grid:
        raise ConfigError("tau = grid needs ground truth; use a value or a multiple like 0.1x")
    try:
        model = load_model(args.model)
        y = model.check_measurements(load_measurements(args.meas))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load inputs: {exc}") from None
    sigma_v = float(np.sqrt(np.mean(np.diag(model.R_at(0)))))
    report = run_estimator(spec, model, y, sigma_v, sigma_u=args.sigma_u)
    x, u = np.asarray(report.x), np.asarray(report.u)
    header = ["k"] + [f"x{i + 1}" for i in range(model.n)] + [f"u{i + 1}" for i in range(model.m)]
    lines = [",".join(header)]
    for k in range(model.K):
        u_k = u[k] if k < u.shape[0] else np.full(model.m, np.nan)
        lines.append(",".join([str(k + 1)] + [repr(float(v)) for v in np.concatenate([x[k], u_k])]))
    _write(args.out, "\n".join(lines) + "\n")
    print(f"{spec.name}: {report.iterations} iterations, converged={report.converged}, "
          f"{report.runtime_s:.3f} s", file=sys.stderr)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    config = load_config(args.config)
    if args.trials is not None:
        config = config.with_changes(trials=args.trials)
    progress = None
    if args.verbose:
        progress = lambda r: print(f"{r.algo} p={r.p} seed={r.seed} {r.status} "
                                   f"nmse_u={r.nmse_input:.4g}", file=sys.stderr)
    records = run_benchmark(config, progress=progress)
    _write(args.out, records_to_csv(records))
    print(summary_table(records), file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return EXIT_OK


def cmd_phase(args) -> int:
    config = load_config(args.config)
    progress = None
    if args.verbose:
        progress = lambda a, s, p, rate: print(f"{a} s={s} p={p} rate={rate:.2f}", file=sys.stderr)
    points = phase_transition(config, progress=progress)
    _write(args.out, phase_to_csv(points))
    for pt in points:
        where = pt.p_min if pt.reachable else "unreachable"
        print(f"{pt.algo:<16} s={pt.s:<3} p_min={where} rate={pt.success_rate:.2f}",
              file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return EXIT_OK


def cmd_fixtures(args) -> int:
    """Small deterministic reference instance for cross-implementation checks."""
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model = build_random_system(args.n, args.m, args.p, args.K, args.seed, sigma_v=args.sigma_v)
        u, supports = generate_sparse_inputs(args.m, args.K, args.s, args.sigma_u,
                                             args.support_mode, seed=args.seed + 1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    traj = simulate(model, u, seed=args.seed + 2, supports=supports, sigma_u=args.sigma_u)
    save_model(out / "model.txt", model)
    save_trajectory(out / "trajectory.txt", traj)
    save_measurements(out / "measurements.txt", traj.y)
    print(f"wrote fixtures to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparse-rks", description="States and sparse inputs of linear systems.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate one benchmark trial and write fixture files")
    p.add_argument("--config", required=True)
    p.add_argument("--p", type=int, help="measurement dimension (default: first in the sweep)")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run one estimator on fixture files")
    p.add_argument("--algo", required=True, choices=sorted(ALGORITHM_KEYS))
    p.add_argument("--model", required=True)
    p.add_argument("--meas", required=True)
    p.add_argument("--out", default="-", help="CSV with K rows of x and u (default stdout)")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="estimator parameter, as in an [algo.*] config section")
    p.add_argument("--sigma-u", type=float, default=1.0,
                   help="input amplitude scale used by early-exit rules")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("benchmark", help="run a benchmark sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="-", help="metrics CSV (default stdout)")
    p.add_argument("--trials", type=int, help="override the number of trials")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("phase", help="run a phase-transition sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="-", help="phase CSV (default stdout)")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_phase)

    p = sub.add_parser("fixtures", help="write a small reference instance")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--K", type=int, default=6)
    p.add_argument("--s", type=int, default=2)
    p.add_argument("--sigma-u", type=float, default=1.0)
    p.add_argument("--sigma-v", type=float, default=0.1)
    p.add_argument("--support-mode", default="time_varying", choices=["time_varying", "joint"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"sparse-rks: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"sparse-rks: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

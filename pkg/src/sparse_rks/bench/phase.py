"""Phase-transition sweep: minimum measurement dimension for reliable recovery."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .config import ExperimentConfig
from .runner import evaluate, make_trial

PHASE_COLUMNS = ("algo", "s", "p_min", "success_rate", "status")
MIN_TRIALS = 10


@dataclass
class PhasePoint:
    """Smallest swept p whose success rate reaches the target, per (algorithm, s).

    ``p_min`` is None and ``status`` is "unreachable" when no swept p
    succeeds; ``success_rate`` then holds the best rate seen.
    """

    algo: str
    s: int
    p_min: int | None
    success_rate: float
    status: str

    @property
    def reachable(self) -> bool:
        return self.p_min is not None


def trial_success(record, threshold: float) -> bool:
    return record.ok and record.nmse_input < threshold


def phase_transition(config: ExperimentConfig, progress=None) -> list[PhasePoint]:
    """Sweep p upward (in the configured order) for each sparsity and algorithm.

    A trial succeeds when its input NMSE is below the threshold; for an
    all-zero input the estimate energy is normalized by K sigma_u^2. The sweep
    for an (algorithm, s) pair stops at the first p whose success rate
    reaches the target. Data are matched across algorithms per (s, p, trial).
    """
    settings = config.phase
    if settings is None:
        raise ConfigError("configuration has no [phase] section")
    if config.trials < MIN_TRIALS:
        raise ConfigError(f"phase sweeps need at least {MIN_TRIALS} trials")
    p_values = sorted(settings.p_values)
    points = []
    for spec in config.algorithms:
        for s in settings.s_values:
            best_rate, found = 0.0, None
            for p in p_values:
                wins = 0
                for trial in range(config.trials):
                    data = make_trial(config, p, trial, s=s, stream=s + 1)
                    record = evaluate(spec, config, data, p)
                    wins += trial_success(record, settings.threshold)
                rate = wins / config.trials
                best_rate = max(best_rate, rate)
                if progress is not None:
                    progress(spec.name, s, p, rate)
                if rate >= settings.success_rate:
                    found = (p, rate)
                    break
            if found is None:
                points.append(PhasePoint(spec.name, s, None, best_rate, "unreachable"))
            else:
                points.append(PhasePoint(spec.name, s, found[0], found[1], "ok"))
    return points


def phase_to_csv(points) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(PHASE_COLUMNS)
    for pt in points:
        writer.writerow([pt.algo, pt.s, "" if pt.p_min is None else pt.p_min,
                         repr(float(pt.success_rate)), pt.status])
    return buffer.getvalue()


def phase_from_csv(text: str) -> list[PhasePoint]:
    reader = csv.reader(io.StringIO(text))
    if tuple(next(reader)) != PHASE_COLUMNS:
        raise ValueError("unexpected phase CSV header")
    return [PhasePoint(algo=r[0], s=int(r[1]), p_min=int(r[2]) if r[2] else None,
                       success_rate=float(r[3]), status=r[4]) for r in reader if r]


def write_phase_csv(points, path) -> None:
    Path(path).write_text(phase_to_csv(points))


def p_min_or_inf(points, algo: str, s: int) -> float:
    """p_min as a number, with unreachable points mapped to infinity."""
    for pt in points:
        if pt.algo == algo and pt.s == s:
            return float(pt.p_min) if pt.reachable else np.inf
    raise KeyError((algo, s))

"""Experiment configuration files.

A configuration is an INI file with one ``[experiment]`` section, one
``[algo.NAME]`` section per estimator and an optional ``[phase]`` section::

    [experiment]
    n = 10
    m = 40
    K = 10
    s = 3
    p = 4:24:2          # list "4, 8, 12" or inclusive range start:stop[:step]
    snr_db = 20
    sigma_u = 5
    support_mode = time_varying
    trials = 50
    seed = 2024

    [algo.sbl]
    r_max = 100

    [algo.l1_small]
    kind = l1
    tau = 0.1x          # number, "<mult>x" (times sigma_v sqrt(2 log m)) or "grid"

Unknown sections and keys are rejected.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import ConfigError

SUPPORT_MODES = ("time_varying", "joint")

EXPERIMENT_KEYS = {
    "n": int, "m": int, "K": int, "s": int, "p": "int_list", "snr_db": float,
    "sigma_u": float, "sigma_v": float, "support_mode": str, "trials": int, "seed": int,
    "noise": bool, "runtime": bool,
}
EXPERIMENT_REQUIRED = ("n", "m", "K", "s", "p", "trials", "seed")

PHASE_KEYS = {"s": "int_list", "p": "int_list", "threshold": float, "success_rate": float}

# kind -> {key: parser}
ALGORITHM_KEYS = {
    "rks": {},
    "ridge": {"ridge": float},
    "l1": {"tau": "tau", "c": float, "r_max": int},
    "group_l1": {"tau": "tau", "c": float, "r_max": int},
    "reweighted_l2": {"tau": "tau", "l": float, "r_max": int, "epsilon_w": float},
    "sbl": {"r_max": int, "eps_thres": float},
    "msbl": {"r_max": int, "eps_thres": float},
    "vb": {"a": float, "b": float, "r_max": int, "r_tilde_max": int,
           "drop_terminal_coupling": bool, "eps_thres": float},
    "mvb": {"a": float, "b": float, "r_max": int, "r_tilde_max": int,
            "drop_terminal_coupling": bool, "eps_thres": float},
    "bp": {"epsilon": "epsilon", "max_iter": int},
    "group_bp": {"epsilon": "epsilon", "max_iter": int},
}


@dataclass(frozen=True)
class TauSetting:
    """Regularization weight: fixed value, multiple of the universal threshold, or grid."""

    value: float | None = None
    multiplier: float | None = None
    grid: bool = False

    def __str__(self) -> str:
        if self.grid:
            return "grid"
        if self.multiplier is not None:
            return f"{self.multiplier!r}x"
        return repr(self.value)


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PhaseSettings:
    s_values: tuple
    p_values: tuple
    threshold: float = 0.05
    success_rate: float = 0.9


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    m: int
    K: int
    s: int
    p_values: tuple
    trials: int
    seed: int
    snr_db: float = 20.0
    sigma_u: float = 5.0
    sigma_v: float | None = None
    support_mode: str = "time_varying"
    noise: bool = True
    record_runtime: bool = True
    algorithms: tuple = ()
    phase: PhaseSettings | None = None

    def __post_init__(self):
        for name in ("n", "m", "K", "trials"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if not 0 <= self.s <= self.m:
            raise ConfigError(f"s={self.s} must lie in 0..m={self.m}")
        if not self.p_values or min(self.p_values) < 1:
            raise ConfigError("p values must be at least 1")
        if self.support_mode not in SUPPORT_MODES:
            raise ConfigError(f"support_mode must be one of {SUPPORT_MODES}")
        if self.sigma_u <= 0 or (self.sigma_v is not None and self.sigma_v <= 0):
            raise ConfigError("noise and amplitude scales must be positive")
        if self.sigma_v is None and self.noise and self.s == 0:
            raise ConfigError("s = 0 needs an explicit sigma_v or noise = off")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate algorithm names")
        if self.phase is not None:
            if any(not 0 <= s <= self.m for s in self.phase.s_values):
                raise ConfigError("phase sparsity values must lie in 0..m")
            if min(self.phase.p_values) < 1:
                raise ConfigError("phase p values must be at least 1")

    def with_changes(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def parse_int_list(text: str) -> tuple:
    """Parse "4, 8, 12" or an inclusive range "start:stop[:step]"."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [int(t) for t in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1
            if step < 1 or stop < start:
                raise ValueError
            return tuple(range(start, stop + 1, step))
        values = tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot parse integer list {text!r}") from None
    if not values:
        raise ConfigError("empty integer list")
    return values


def parse_tau(text: str) -> TauSetting:
    text = text.strip().lower()
    try:
        if text == "grid":
            return TauSetting(grid=True)
        if text.endswith("x"):
            mult = float(text[:-1])
            if mult < 0:
                raise ValueError
            return TauSetting(multiplier=mult)
        value = float(text)
        if value < 0:
            raise ValueError
        return TauSetting(value=value)
    except ValueError:
        raise ConfigError(f"cannot parse tau {text!r}") from None


def parse_epsilon(text: str):
    text = text.strip().lower()
    if text == "auto":
        return None
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"cannot parse epsilon {text!r}") from None
    if value < 0:
        raise ConfigError("epsilon must be nonnegative")
    return value


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean {text!r}")


def _convert(key: str, text: str, kind):
    if kind == "int_list":
        return parse_int_list(text)
    if kind == "tau":
        return parse_tau(text)
    if kind == "epsilon":
        return parse_epsilon(text)
    if kind is bool:
        return _parse_bool(text)
    try:
        return kind(text.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def _section(parser, name, schema) -> dict:
    values = {}
    for key, text in parser.items(name):
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")
        values[key] = _convert(key, text, schema[key])
    return values


def parse_algorithm(name: str, options: dict) -> AlgorithmSpec:
    """Build an algorithm spec from a name and raw string options."""
    options = dict(options)
    kind = options.pop("kind", name).strip()
    if kind not in ALGORITHM_KEYS:
        raise ConfigError(f"unknown algorithm kind {kind!r}")
    schema = ALGORITHM_KEYS[kind]
    params = {}
    for key, text in options.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for algorithm {name!r} ({kind})")
        params[key] = _convert(key, text, schema[key])
    return AlgorithmSpec(name=name, kind=kind, params=params)


def config_from_string(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    algorithms, phase = [], None
    for name in parser.sections():
        if name == "experiment":
            continue
        if name == "phase":
            values = _section(parser, name, PHASE_KEYS)
            for key in ("s", "p"):
                if key not in values:
                    raise ConfigError(f"[phase] needs {key!r}")
            phase = PhaseSettings(s_values=values["s"], p_values=values["p"],
                                  threshold=values.get("threshold", 0.05),
                                  success_rate=values.get("success_rate", 0.9))
        elif name.startswith("algo."):
            algorithms.append(parse_algorithm(name[5:], dict(parser.items(name))))
        else:
            raise ConfigError(f"unknown section [{name}]")
    exp = _section(parser, "experiment", EXPERIMENT_KEYS)
    missing = [k for k in EXPERIMENT_REQUIRED if k not in exp]
    if missing:
        raise ConfigError(f"[experiment] is missing {', '.join(missing)}")
    if not algorithms:
        raise ConfigError("no [algo.*] sections")
    return ExperimentConfig(
        n=exp["n"], m=exp["m"], K=exp["K"], s=exp["s"], p_values=exp["p"],
        trials=exp["trials"], seed=exp["seed"], snr_db=exp.get("snr_db", 20.0),
        sigma_u=exp.get("sigma_u", 5.0), sigma_v=exp.get("sigma_v"),
        support_mode=exp.get("support_mode", "time_varying"), noise=exp.get("noise", True),
        record_runtime=exp.get("runtime", True), algorithms=tuple(algorithms), phase=phase)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    return config_from_string(text)

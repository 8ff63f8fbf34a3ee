"""One flat key/value config format shared by every command.

Sections: [kernel] selects the energy and its sharpness, [schedule] the
scan grids and schedules, [trial] the per-trial step counts plus the
explicit (n, m, temperature) used by the single-trial command, [oracle]
the quadrature inputs, and [run] the master seed and worker count. Grids
are given either as explicit value lists (``alpha_values``) or as
min/max/step triples. Parsing then re-serializing is idempotent.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .energy import DEFAULT_EPSILON, KernelSpec
from .oracle import DEFAULT_POINTS
from .scan import (
    DEFAULT_THRESHOLD_FRACTION,
    ScanSchedule,
    _uniform_grid,
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


_SECTIONS = ("kernel", "schedule", "trial", "oracle", "run")

_KEYS = {
    "kernel": {"kind", "beta_net", "b", "epsilon"},
    "schedule": {
        "alpha_values", "alpha_min", "alpha_max", "alpha_step",
        "temp_values", "temp_min", "temp_max", "temp_step",
        "m_min", "m_max", "gamma", "ntr_max", "ntr_min", "memory_budget",
    },
    "trial": {"n", "m", "temperature", "n_eq", "n_samp",
              "phi_init_low", "phi_init_high"},
    "oracle": {"n", "points", "temp_values", "temp_min", "temp_max", "temp_step"},
    "run": {"seed", "workers", "threshold_fraction"},
}


@dataclass(frozen=True)
class TrialSettings:
    n_eq: int = 16_384
    n_samp: int = 4_096
    phi_init_low: float = 0.75
    phi_init_high: float = 1.0
    n: int | None = None           # single-trial command only
    m: int | None = None
    temperature: float | None = None


@dataclass(frozen=True)
class OracleSettings:
    n: int | None = None
    points: int = DEFAULT_POINTS
    temp_grid: tuple[float, ...] | None = None


@dataclass(frozen=True)
class RunConfig:
    kernel: KernelSpec
    schedule: ScanSchedule
    trial: TrialSettings = field(default_factory=TrialSettings)
    oracle: OracleSettings = field(default_factory=OracleSettings)
    seed: int = 0
    workers: int = 0               # 0 = available parallelism
    threshold_fraction: float = DEFAULT_THRESHOLD_FRACTION


def parse_memory_budget(text: str, key: str = "memory_budget") -> int:
    """Bytes, optionally suffixed K/M/G (binary multiples)."""
    s = text.strip()
    factor = 1
    if s and s[-1].upper() in "KMG":
        factor = {"K": 2**10, "M": 2**20, "G": 2**30}[s[-1].upper()]
        s = s[:-1]
    try:
        value = int(s) * factor
    except ValueError:
        raise ConfigError(f"{key}: expected bytes or K/M/G suffix, got {text!r}") from None
    if value < 1:
        raise ConfigError(f"{key}: must be positive, got {text!r}")
    return value


def _get(section, sec_name, key, conv, default=None):
    if key not in section:
        return default
    raw = section[key]
    try:
        return conv(raw)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(
            f"[{sec_name}] {key}: cannot parse {raw!r} as {conv.__name__}"
        ) from None


def _values_list(raw: str) -> tuple[float, ...]:
    parts = raw.replace(",", " ").split()
    return tuple(float(p) for p in parts)


def _grid(section, sec_name, prefix, default):
    values_key = f"{prefix}_values"
    triple = [f"{prefix}_min", f"{prefix}_max", f"{prefix}_step"]
    has_values = values_key in section
    has_triple = [k for k in triple if k in section]
    if has_values and has_triple:
        raise ConfigError(
            f"[{sec_name}] {values_key}: give either a value list or "
            f"{prefix}_min/max/step, not both"
        )
    if has_values:
        grid = _get(section, sec_name, values_key, _values_list)
        if not grid:
            raise ConfigError(f"[{sec_name}] {values_key}: empty grid")
        return grid
    if has_triple:
        if len(has_triple) != 3:
            missing = [k for k in triple if k not in section]
            raise ConfigError(f"[{sec_name}] {missing[0]}: missing (grid triples "
                              "need min, max and step)")
        lo, hi, step = (_get(section, sec_name, k, float) for k in triple)
        if step <= 0 or hi < lo:
            raise ConfigError(f"[{sec_name}] {prefix}_step: need step > 0 and max >= min")
        return _uniform_grid(lo, hi, step)
    return default


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"[{sec}]: unknown section")
        for key in cp[sec]:
            if key not in _KEYS[sec]:
                raise ConfigError(f"[{sec}] {key}: unknown key")

    kern = cp["kernel"] if cp.has_section("kernel") else {}
    kind = kern.get("kind", "lse").strip().lower() if kern else "lse"
    if kind not in ("lse", "lsr"):
        raise ConfigError(f"[kernel] kind: must be lse or lsr, got {kind!r}")
    beta_net = _get(kern, "kernel", "beta_net", float) if kern else None
    b = _get(kern, "kernel", "b", float) if kern else None
    epsilon = (_get(kern, "kernel", "epsilon", float, DEFAULT_EPSILON)
               if kern else DEFAULT_EPSILON)
    if beta_net is None and b is None:
        beta_net = 1.0
    try:
        kernel = KernelSpec(kind=kind, beta_net=beta_net, b=b, epsilon=epsilon)
    except ValueError as exc:
        raise ConfigError(f"[kernel]: {exc}") from None

    defaults = ScanSchedule()
    sched_sec = cp["schedule"] if cp.has_section("schedule") else {}
    trial_sec = cp["trial"] if cp.has_section("trial") else {}
    trial = TrialSettings(
        n_eq=_get(trial_sec, "trial", "n_eq", int, 16_384),
        n_samp=_get(trial_sec, "trial", "n_samp", int, 4_096),
        phi_init_low=_get(trial_sec, "trial", "phi_init_low", float, 0.75),
        phi_init_high=_get(trial_sec, "trial", "phi_init_high", float, 1.0),
        n=_get(trial_sec, "trial", "n", int),
        m=_get(trial_sec, "trial", "m", int),
        temperature=_get(trial_sec, "trial", "temperature", float),
    )
    try:
        schedule = ScanSchedule(
            alpha_grid=_grid(sched_sec, "schedule", "alpha", defaults.alpha_grid),
            temp_grid=_grid(sched_sec, "schedule", "temp", defaults.temp_grid),
            m_min=_get(sched_sec, "schedule", "m_min", int, defaults.m_min),
            m_max=_get(sched_sec, "schedule", "m_max", int, defaults.m_max),
            gamma=_get(sched_sec, "schedule", "gamma", float, defaults.gamma),
            ntr_max=_get(sched_sec, "schedule", "ntr_max", int, defaults.ntr_max),
            ntr_min=_get(sched_sec, "schedule", "ntr_min", int, defaults.ntr_min),
            n_eq=trial.n_eq,
            n_samp=trial.n_samp,
            phi_init_range=(trial.phi_init_low, trial.phi_init_high),
            memory_budget=(parse_memory_budget(sched_sec["memory_budget"],
                                               "[schedule] memory_budget")
                           if "memory_budget" in sched_sec else defaults.memory_budget),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[schedule]: {exc}") from None

    oracle_sec = cp["oracle"] if cp.has_section("oracle") else {}
    oracle = OracleSettings(
        n=_get(oracle_sec, "oracle", "n", int),
        points=_get(oracle_sec, "oracle", "points", int, DEFAULT_POINTS),
        temp_grid=_grid(oracle_sec, "oracle", "temp", None),
    )

    run_sec = cp["run"] if cp.has_section("run") else {}
    return RunConfig(
        kernel=kernel,
        schedule=schedule,
        trial=trial,
        oracle=oracle,
        seed=_get(run_sec, "run", "seed", int, 0),
        workers=_get(run_sec, "run", "workers", int, 0),
        threshold_fraction=_get(run_sec, "run", "threshold_fraction", float,
                                DEFAULT_THRESHOLD_FRACTION),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) reproduces cfg exactly."""
    out = io.StringIO()

    def section(name, pairs):
        rows = [(k, v) for k, v in pairs if v is not None]
        if not rows:
            return
        out.write(f"[{name}]\n")
        for k, v in rows:
            out.write(f"{k} = {v}\n")
        out.write("\n")

    def fnum(x):
        return None if x is None else repr(float(x))

    def grid_pairs(prefix, grid):
        if grid is None:
            return []
        return [(f"{prefix}_values", " ".join(repr(float(v)) for v in grid))]

    k = cfg.kernel
    section("kernel", [("kind", k.kind), ("beta_net", fnum(k.beta_net)),
                       ("b", fnum(k.b)), ("epsilon", fnum(k.epsilon))])
    s = cfg.schedule
    section("schedule",
            grid_pairs("alpha", s.alpha_grid) + grid_pairs("temp", s.temp_grid) + [
                ("m_min", s.m_min), ("m_max", s.m_max), ("gamma", fnum(s.gamma)),
                ("ntr_max", s.ntr_max), ("ntr_min", s.ntr_min),
                ("memory_budget", s.memory_budget),
            ])
    t = cfg.trial
    section("trial", [("n", t.n), ("m", t.m), ("temperature", fnum(t.temperature)),
                      ("n_eq", t.n_eq), ("n_samp", t.n_samp),
                      ("phi_init_low", fnum(t.phi_init_low)),
                      ("phi_init_high", fnum(t.phi_init_high))])
    o = cfg.oracle
    section("oracle", [("n", o.n), ("points", o.points)] + grid_pairs("temp", o.temp_grid))
    section("run", [("seed", cfg.seed), ("workers", cfg.workers),
                    ("threshold_fraction", fnum(cfg.threshold_fraction))])
    return out.getvalue()

"""Plain-text run configuration.

The config file is line-oriented ``key = value`` with ``#`` comments.  The
key set is closed: unknown keys are rejected so typos fail loudly.  Values
are parsed by type per key; lists are comma-separated; month groups use
range syntax like ``4:10,11:3`` (wrapping across December), the first group
being the regression baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from datetime import date as _date

import numpy as np

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


def _parse_date(text: str, key: str) -> np.datetime64:
    try:
        return np.datetime64(_date.fromisoformat(text.strip()), "D")
    except ValueError as exc:
        raise ConfigError(f"{key}: invalid ISO date {text!r}") from exc


def _parse_bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {text!r}")


def _parse_floats(text: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated numbers") from exc


def _parse_month_groups(text: str, key: str) -> tuple[tuple[int, ...], ...]:
    groups: list[tuple[int, ...]] = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            a, b = part.split(":", 1)
            a, b = int(a), int(b)
            if not (1 <= a <= 12 and 1 <= b <= 12):
                raise ConfigError(f"{key}: months must be in 1..12")
            if a <= b:
                months = tuple(range(a, b + 1))
            else:  # wraps across the year end
                months = tuple(list(range(a, 13)) + list(range(1, b + 1)))
        else:
            months = (int(part),)
        groups.append(months)
    flat = sorted(m for g in groups for m in g)
    if flat != list(range(1, 13)):
        raise ConfigError(f"{key}: groups must partition months 1..12")
    return tuple(groups)


@dataclass
class RunConfig:
    """Full pipeline configuration with the documented defaults."""

    window_start: np.datetime64 | None = None
    window_end: np.datetime64 | None = None
    delta: float = 1.0
    margins: tuple[str, ...] = ("m1", "m2")
    seed: int = 0

    claims_file: str | None = None
    exposure_file: str | None = None

    em_iters: int = 150
    mcmc_iters: int = 20_000
    em_samples: int = 100
    burn_fraction: float = 0.5
    merge_threshold: float = 0.01
    filter_iterations: int = 20_000
    filter_samples: int = 100

    predict_horizon: int = 365
    predict_n_sims: int = 100_000

    glm_day_of_week: bool = True
    glm_month_encoding: str = "select"  # grouped | spline | select | none
    glm_month_groups: tuple[tuple[int, ...], ...] | None = None
    glm_trend: str = "days"
    holidays: tuple[np.datetime64, ...] = ()

    sim_rho: tuple[float, ...] = (33.77, 18.74)
    sim_eta: tuple[float, ...] = (0.17, 0.18)
    sim_kappa: tuple[float, ...] = (2.37, 1.28)
    sim_delta: float = 0.4214
    sim_policies: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self) -> None:
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if not 0.0 <= self.burn_fraction < 1.0:
            raise ConfigError("burn_fraction must be in [0, 1)")
        if self.glm_month_encoding not in ("grouped", "spline", "select", "none"):
            raise ConfigError(f"unknown glm_month_encoding {self.glm_month_encoding!r}")
        if self.glm_trend not in ("days", "none"):
            raise ConfigError(f"unknown glm_trend {self.glm_trend!r}")
        if self.predict_horizon <= 0 or self.predict_n_sims <= 0:
            raise ConfigError("prediction settings must be positive")
        if min(self.em_iters, self.mcmc_iters, self.em_samples) <= 0:
            raise ConfigError("EM settings must be positive")
        if self.merge_threshold < 0:
            raise ConfigError("merge_threshold must be >= 0")
        if len(self.margins) != len(set(self.margins)):
            raise ConfigError("margin names must be unique")
        if self.window_start is not None and self.window_end is not None:
            if self.window_end < self.window_start:
                raise ConfigError("window_end before window_start")

    @property
    def num_days(self) -> int:
        if self.window_start is None or self.window_end is None:
            raise ConfigError("window_start and window_end are required")
        return int((self.window_end - self.window_start).astype(int)) + 1

    @property
    def dates(self) -> np.ndarray:
        return self.window_start + np.arange(self.num_days).astype("timedelta64[D]")


_PARSERS = {
    "window_start": _parse_date,
    "window_end": _parse_date,
    "delta": lambda t, k: float(t),
    "margins": lambda t, k: tuple(m.strip() for m in t.split(",")),
    "seed": lambda t, k: int(t),
    "claims_file": lambda t, k: t.strip(),
    "exposure_file": lambda t, k: t.strip(),
    "em_iters": lambda t, k: int(t),
    "mcmc_iters": lambda t, k: int(t),
    "em_samples": lambda t, k: int(t),
    "burn_fraction": lambda t, k: float(t),
    "merge_threshold": lambda t, k: float(t),
    "filter_iterations": lambda t, k: int(t),
    "filter_samples": lambda t, k: int(t),
    "predict_horizon": lambda t, k: int(t),
    "predict_n_sims": lambda t, k: int(t),
    "glm_day_of_week": _parse_bool,
    "glm_month_encoding": lambda t, k: t.strip(),
    "glm_month_groups": _parse_month_groups,
    "glm_trend": lambda t, k: t.strip(),
    "holidays": lambda t, k: tuple(_parse_date(v, k) for v in t.split(",")),
    "sim_rho": _parse_floats,
    "sim_eta": _parse_floats,
    "sim_kappa": _parse_floats,
    "sim_delta": lambda t, k: float(t),
    "sim_policies": _parse_floats,
}

assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def parse_config(text: str) -> RunConfig:
    """Parse key = value lines into a RunConfig; unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](value.strip(), key)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())

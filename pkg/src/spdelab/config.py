"""Sectioned key=value experiment configs with a closed schema.

Format: ``[section]`` headers, ``key = value`` lines, ``#`` comments. Unknown
sections or keys are hard errors annotated with the line number, as are type
mismatches. Every key has a default, so a minimal config only names the
experiment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError
from .grids import TimeGrid
from .presets import COEFFICIENT_PRESETS, INITIAL_KINDS

EXPERIMENTS = (
    "toy-carleman",
    "ito-check",
    "forward-convergence",
    "energy-bound",
    "identity-check",
    "carleman-sweep",
    "interpolation",
    "backward-rate",
    "inverse-source-gram",
    "transform-residuals",
)


def _float_list(raw: str) -> list[float]:
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise ValueError(str(exc))


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _str_list(raw: str) -> list[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]


#: schema: section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "experiment": {
        "name": (str, None),
        "seed": (int, 1234),
        "workers": (int, 1),
    },
    "grid": {
        "dimension": (int, 1),
        "length": (float, 1.0),
        "length2": (float, 1.0),
        "interior_points": (int, 65),
        "interior_points2": (int, 17),
    },
    "time": {
        "horizon": (float, 1.0),
        "steps": (int, 256),
        "delta": (float, 0.0),
        "t0": (float, 0.5),
        "t1": (float, 0.25),
        "t2": (float, 0.375),
    },
    "coefficients": {
        "preset": (str, "heat"),
    },
    "initial": {
        "kind": (str, "sine"),
        "amplitude": (float, 1.0),
    },
    "weights": {
        "psi": (str, "increasing"),
        "offset": (float, 0.0),
        "s_values": (_float_list, [1.0, 2.0, 4.0]),
        "lambda_values": (_float_list, [1.0, 2.0]),
    },
    "ensemble": {
        "paths": (int, 2000),
    },
    "backward": {
        "alpha": (float, 1e-10),
        "noise_levels": (_float_list, [1e-1, 3.16e-2, 1e-2, 3.16e-3, 1e-3, 3.16e-4, 1e-4]),
        "replicates": (int, 5),
        "prior_bound": (float, 1.0),
        "theta_lambda": (float, 1.0),
        "theta_c": (float, 2.0),
    },
    "source": {
        "preset": (str, "source-1d"),
        "basis_size": (int, 4),
        "recovery_demo": (_bool, False),
        "observed_faces": (_str_list, []),
    },
}

_CHOICES = {
    ("experiment", "name"): EXPERIMENTS,
    ("coefficients", "preset"): COEFFICIENT_PRESETS,
    ("initial", "kind"): INITIAL_KINDS,
    ("weights", "psi"): ("increasing", "decreasing"),
    ("source", "preset"): ("source-1d", "source-2d"),
}

#: per-experiment defaults, applied to keys the config file leaves unset
EXPERIMENT_DEFAULTS: dict[str, dict[tuple[str, str], Any]] = {
    "toy-carleman": {("ensemble", "paths"): 100},
    "ito-check": {("ensemble", "paths"): 100},
    "forward-convergence": {("grid", "interior_points"): 31,
                            ("time", "steps"): 128,
                            ("ensemble", "paths"): 10000},
    "energy-bound": {("coefficients", "preset"): "multiplicative",
                     ("grid", "interior_points"): 33,
                     ("time", "steps"): 128,
                     ("ensemble", "paths"): 400},
    "identity-check": {("grid", "interior_points"): 129,
                       ("time", "steps"): 512,
                       ("ensemble", "paths"): 10000},
    "carleman-sweep": {("ensemble", "paths"): 2000},
    "interpolation": {("coefficients", "preset"): "multiplicative",
                      ("grid", "interior_points"): 63,
                      ("time", "steps"): 128,
                      ("ensemble", "paths"): 32},
    "backward-rate": {("time", "horizon"): 0.08,
                      ("time", "steps"): 128,
                      ("time", "t0"): 0.04,
                      ("time", "t1"): 0.02,
                      ("time", "t2"): 0.03,
                      ("grid", "interior_points"): 63},
    "inverse-source-gram": {("time", "horizon"): 0.5,
                            ("time", "steps"): 128,
                            ("time", "t0"): 0.4,
                            ("time", "t1"): 0.25,
                            ("time", "t2"): 0.3,
                            ("grid", "interior_points"): 63},
    "transform-residuals": {("time", "horizon"): 0.5,
                            ("time", "steps"): 64,
                            ("time", "t0"): 0.5,
                            ("time", "t1"): 0.3,
                            ("time", "t2"): 0.4,
                            ("grid", "interior_points"): 31},
}


@dataclass
class ExperimentConfig:
    """Typed view over a parsed config with schema defaults filled in."""

    values: dict[str, dict[str, Any]] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.get("experiment", "name")

    @property
    def seed(self) -> int:
        return self.get("experiment", "seed")

    @property
    def workers(self) -> int:
        return self.get("experiment", "workers")

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value) -> None:
        self.values[section][key] = value

    def echo_lines(self) -> list[str]:
        """Canonical serialization (sorted, typed) for reports."""
        out = []
        for section in sorted(self.values):
            out.append(f"[{section}]")
            for key in sorted(self.values[section]):
                value = self.values[section][key]
                if isinstance(value, list):
                    value = ",".join(f"{v:g}" for v in value)
                out.append(f"{key} = {value}")
        return out


def _defaults() -> dict[str, dict[str, Any]]:
    return {
        section: {key: (list(default) if isinstance(default, list) else default)
                  for key, (_, default) in keys.items()}
        for section, keys in SCHEMA.items()
    }


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config; raises ConfigError with line positions.

    Keys the file leaves unset get first the experiment-specific default
    (once the experiment name is known) and otherwise the schema default.
    """
    values = _defaults()
    explicit: set[tuple[str, str]] = set()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        if section is None:
            raise ConfigError("key outside any [section]", lineno)
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]", lineno)
        parser, _ = SCHEMA[section][key]
        try:
            value = parser(raw_value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {section}.{key}: {exc}", lineno)
        choices = _CHOICES.get((section, key))
        if choices is not None and value not in choices:
            raise ConfigError(
                f"{section}.{key} must be one of {', '.join(choices)}; got {value!r}",
                lineno,
            )
        values[section][key] = value
        explicit.add((section, key))
    if ("experiment", "name") not in explicit:
        raise ConfigError("missing experiment name ([experiment] name = ...)")
    for (sec, key), value in EXPERIMENT_DEFAULTS.get(values["experiment"]["name"], {}).items():
        if (sec, key) not in explicit:
            values[sec][key] = list(value) if isinstance(value, list) else value
    cfg = ExperimentConfig(values=values)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Cross-field checks: positivity, marked-time orderings per experiment."""
    name = cfg.name
    horizon = cfg.get("time", "horizon")
    steps = cfg.get("time", "steps")
    if horizon <= 0 or steps < 1:
        raise ConfigError("time.horizon must be positive and time.steps >= 1")
    if cfg.get("ensemble", "paths") < 1:
        raise ConfigError("ensemble.paths must be >= 1")
    if cfg.get("experiment", "workers") < 1:
        raise ConfigError("experiment.workers must be >= 1")
    tg = TimeGrid(horizon, steps)
    delta = tg.snap(cfg.get("time", "delta"))
    t0 = tg.snap(cfg.get("time", "t0"))
    t1 = tg.snap(cfg.get("time", "t1"))
    t2 = tg.snap(cfg.get("time", "t2"))
    if name in ("identity-check", "carleman-sweep"):
        if not (0.0 <= delta < horizon):
            raise ConfigError("need 0 <= delta < horizon for weighted-identity runs")
    if name in ("interpolation", "backward-rate"):
        if not (0.0 < t0 <= horizon):
            raise ConfigError("need 0 < t0 <= horizon")
    if name == "backward-rate":
        if not (0.0 < t1 < t2 < t0):
            raise ConfigError(
                "backward ordering violated: need 0 < t1 < t2 < t0 <= horizon"
            )
        if cfg.get("backward", "alpha") <= 0:
            raise ConfigError("backward.alpha must be positive")
    if name in ("inverse-source-gram", "transform-residuals"):
        if not (0.0 < t1 < t2 < t0):
            raise ConfigError(
                "source-window ordering violated: need 0 < t1 < t2 < t0"
            )
        if cfg.get("source", "basis_size") < 1:
            raise ConfigError("source.basis_size must be >= 1")
    dim = cfg.get("grid", "dimension")
    if dim not in (1, 2):
        raise ConfigError("grid.dimension must be 1 or 2")
    if cfg.get("grid", "interior_points") < 3:
        raise ConfigError("grid.interior_points must be >= 3")


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())

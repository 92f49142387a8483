"""
Run configuration parsing.

Plain-text `key = value` files, one entry per line, `#` starts a comment.
Unknown keys are rejected; lambda1, lambda2 and scenario are required.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from core.errors import (ConfigError, InvalidProblemError, MissingRequiredError,
                         ParseError, UnknownKeyError)
from features.simulation.simulation import ICPreset, Scenario, SimConfig

logger = logging.getLogger('Backstep.Config')

REQUIRED = ("lambda1", "lambda2", "scenario")


@dataclass(frozen=True)
class KernelOptions:
    """Kernel solve settings shared by every family of a run."""

    n: int = 256
    tol: float = 1e-12
    max_iter: int = 200


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(f"expected a positive integer, got {value}")
    return value


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}")
        return text
    return parse


PARSERS: Dict[str, Callable[[str], Any]] = {
    "lambda1": float,
    "lambda2": float,
    "scenario": Scenario,
    "n": _positive_int,
    "nx": _positive_int,
    "dt": float,
    "t_final": float,
    "tol": float,
    "theta": float,
    "max_iter": _positive_int,
    "record_every": _positive_int,
    "startup_steps": int,
    "ic": ICPreset.parse,
    "ic_v": ICPreset.parse,
    "observer_ic": ICPreset.parse,
    "observer_ic_v": ICPreset.parse,
    "plant_control": _choice("feedback", "zero"),
    "actuation": _choice("implicit", "lagged"),
}

KERNEL_KEYS = ("n", "tol", "max_iter")


def parse_text(text: str, overrides: Optional[Dict[str, Any]] = None) -> Tuple[SimConfig, KernelOptions]:
    """Parse configuration text; `overrides` win over file values."""
    values: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got '{raw.strip()}'", number)
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in PARSERS:
            raise UnknownKeyError(key, number)
        if not value:
            raise ParseError(f"empty value for '{key}'", number)
        try:
            values[key] = PARSERS[key](value)
        except ValueError as e:
            raise ParseError(f"bad value for '{key}': {value} ({e})", number) from e

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in PARSERS:
            raise UnknownKeyError(key)
        values[key] = PARSERS[key](value) if isinstance(value, str) else value

    missing = [key for key in REQUIRED if key not in values]
    if missing:
        raise MissingRequiredError(missing)

    options = KernelOptions(**{k: values.pop(k) for k in KERNEL_KEYS if k in values})
    if options.n < 8 or not options.tol > 0:
        raise ConfigError(f"kernel options out of range: n={options.n}, tol={options.tol}")
    cfg = SimConfig(**values)
    try:
        cfg.validate()
    except InvalidProblemError as e:
        raise ConfigError(str(e)) from e
    return cfg, options


def parse_config(path, overrides: Optional[Dict[str, Any]] = None) -> Tuple[SimConfig, KernelOptions]:
    """Read a configuration file into a SimConfig and the kernel options.

    Raises:
        ParseError: malformed line or value (carries the line number).
        UnknownKeyError: key not in the documented set.
        MissingRequiredError: lambda1, lambda2 or scenario absent.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    cfg, options = parse_text(path.read_text(encoding="utf-8"), overrides)
    logger.info(f"Loaded {path}: scenario={cfg.scenario.value}, λ=({cfg.lambda1:g}, {cfg.lambda2:g}), "
                f"n={options.n}, nx={cfg.nx}")
    return cfg, options


def load_run_config(args) -> Tuple[SimConfig, KernelOptions]:
    """Apply the --n/--nx/--scenario command-line flags on top of --config."""
    overrides = {
        "n": getattr(args, "n", None),
        "nx": getattr(args, "nx", None),
        "scenario": getattr(args, "scenario", None),
    }
    return parse_config(args.config, overrides)

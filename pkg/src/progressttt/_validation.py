"""Small input-validation helpers shared by the config dataclasses."""
from __future__ import annotations

import math
from numbers import Integral, Real

from .exceptions import ConfigError


def check_int(value, name: str, *, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_real(
    value,
    name: str,
    *,
    low: float | None = None,
    high: float | None = None,
    low_open: bool = False,
    high_open: bool = False,
) -> float:
    """Validate a finite real scalar against optional (half-)open bounds."""
    if isinstance(value, bool) or not isinstance(value, Real) or not math.isfinite(value):
        raise ConfigError(f"{name} must be a finite real, got {value!r}")
    value = float(value)
    if low is not None and (value < low or (low_open and value == low)):
        op = ">" if low_open else ">="
        raise ConfigError(f"{name} must be {op} {low}, got {value}")
    if high is not None and (value > high or (high_open and value == high)):
        op = "<" if high_open else "<="
        raise ConfigError(f"{name} must be {op} {high}, got {value}")
    return value


def check_seed(value, name: str = "seed") -> int:
    value = check_int(value, name, minimum=0)
    if value >= 2**64:
        raise ConfigError(f"{name} must fit in 64 bits, got {value}")
    return value

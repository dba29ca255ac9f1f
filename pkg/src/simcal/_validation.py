"""Small argument checks shared by the estimators and the command line."""

from __future__ import annotations

import math
from numbers import Integral, Real

from .core import Dataset, SeedStream, as_seed_stream


def check_int(value, name: str, minimum: int | None = None, maximum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ValueError(f"{name} must be <= {maximum}, got {value}")
    return value


def check_real(value, name: str, low: float = -math.inf, high: float = math.inf,
               low_open: bool = False) -> float:
    """Finite real in ``[low, high]`` (``(low, high]`` when ``low_open``)."""
    if isinstance(value, bool) or not isinstance(value, Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite")
    if value < low or (low_open and value == low) or value > high:
        bracket = "(" if low_open else "["
        raise ValueError(f"{name} must lie in {bracket}{low}, {high}], got {value}")
    return value


def check_dataset(ds, name: str = "dataset", min_points: int = 1) -> Dataset:
    if not isinstance(ds, Dataset):
        raise TypeError(f"{name} must be a Dataset, got {type(ds).__name__}")
    if len(ds) < min_points:
        raise ValueError(f"{name} needs at least {min_points} points, got {len(ds)}")
    return ds


def check_seed(seed) -> SeedStream:
    if seed is not None and not isinstance(seed, (SeedStream, Integral)):
        raise TypeError(f"seed must be an int or SeedStream, got {type(seed).__name__}")
    return as_seed_stream(seed)

"""Utility helpers for timing, error wrapping, parallel maps and result files."""

import csv
import functools
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TypeVar

import numpy as np

from .errors import NumericalError

_LOG = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def log_timing(name: str | None = None):
    """Decorator that logs execution timing at DEBUG level."""
    def decorator(func):
        """Wrap a function so its runtime is logged at DEBUG level."""
        label = name or func.__name__

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            """Execute the wrapped function and emit a timing log line."""
            start = time.perf_counter()
            try:
                return func(*args, **kwargs)
            finally:
                elapsed_ms = (time.perf_counter() - start) * 1000
                _LOG.debug("%s took %.1fms", label, elapsed_ms)

        return wrapper

    return decorator


def wrap_numeric_errors():
    """Decorator that converts numpy/scipy numerical failures into NumericalError."""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except np.linalg.LinAlgError as e:
                raise NumericalError(f"{func.__name__}: linear algebra failure: {e}") from e
            except FloatingPointError as e:
                raise NumericalError(f"{func.__name__}: floating point failure: {e}") from e

        return wrapper

    return decorator


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """Map fn over items, preserving input order regardless of the worker count."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def fsum_mean(values: Iterable[float]) -> float:
    """Compensated mean; the result does not depend on summation order."""
    vals = [float(v) for v in values]
    if not vals:
        return 0.0
    return math.fsum(vals) / len(vals)


def fsum_sample_variance(values: Sequence[float]) -> float:
    """Unbiased sample variance with compensated sums."""
    n = len(values)
    if n < 2:
        return 0.0
    m = fsum_mean(values)
    return math.fsum((float(v) - m) ** 2 for v in values) / (n - 1)


def format_float(x: Any) -> str:
    """Format a number with 17 significant digits so CSV values round-trip exactly."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def write_rows_csv(rows: list[dict[str, Any]], out_path: Path) -> None:
    """Write result rows to a CSV file with round-trip float precision."""
    fieldnames: list[str] = []
    seen = set()
    for r in rows:
        for k in r.keys():
            if k not in seen:
                seen.add(k)
                fieldnames.append(k)

    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: format_float(r.get(k)) for k in fieldnames})


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(payload: Any, out_path: Path) -> None:
    """Write a JSON document; Python floats serialize with shortest round-trip repr."""
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, default=_json_default, allow_nan=True)
        f.write("\n")

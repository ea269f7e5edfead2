"""Utility helper functions for the equilibrium stopping toolkit"""
from itertools import combinations
from typing import Iterable, Iterator, List, Sequence, Tuple

import numpy as np


def iter_subsets(items: Sequence[int], include_empty: bool = True) -> Iterator[Tuple[int, ...]]:
    """Yield every subset of `items`, smallest first

    Args:
        items: Elements to combine (order is kept inside each subset)
        include_empty: Whether to yield the empty tuple first

    Returns:
        Iterator over tuples; 2^len(items) of them with the empty set included
    """
    start = 0 if include_empty else 1
    for size in range(start, len(items) + 1):
        yield from combinations(items, size)


def parse_labels(raw: str) -> List[str]:
    """Split a comma separated label list such as "x2,x4"

    Args:
        raw: Label string from a CLI flag or query parameter

    Returns:
        Stripped, non-empty labels in the given order
    """
    return [part.strip() for part in raw.split(',') if part.strip()]


def format_region(labels: Iterable[str]) -> str:
    """Format a set of state labels as {x2,x4}"""
    return '{' + ','.join(labels) + '}'


def to_builtin(value):
    """Convert numpy scalars/arrays (recursively) into JSON-serializable Python objects"""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_builtin(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def safe_divide(numerator: float, denominator: float, default: float = 0.0) -> float:
    """Safely divide two numbers, returning default if denominator is zero

    Args:
        numerator: Numerator
        denominator: Denominator
        default: Default value if denominator is zero

    Returns:
        Result of division or default value
    """
    if denominator == 0:
        return default
    return numerator / denominator

"""
Helper Functions
Utility functions used across the package
"""
import hashlib
from typing import Iterable, List, Tuple

import numpy as np


def hash_arrays(*items: object) -> str:
    """
    Hash arrays and scalars into a stable key

    Args:
        items: numpy arrays, numbers or strings

    Returns:
        Hex digest (SHA256)
    """
    digest = hashlib.sha256()
    for item in items:
        if isinstance(item, np.ndarray):
            digest.update(str(item.dtype).encode())
            digest.update(str(item.shape).encode())
            digest.update(np.ascontiguousarray(item).tobytes())
        else:
            digest.update(repr(item).encode())
        digest.update(b"|")
    return digest.hexdigest()


def chunk_ranges(count: int, chunk_size: int) -> List[Tuple[int, int]]:
    """
    Split ``range(count)`` into contiguous chunks

    Args:
        count: Number of items
        chunk_size: Size of each chunk

    Returns:
        List of (start, stop) pairs
    """
    chunk_size = max(1, int(chunk_size))
    return [(i, min(i + chunk_size, count)) for i in range(0, count, chunk_size)]


def format_float(value: float) -> str:
    """Format a real with 17 significant digits (round-trip exact)"""
    return f"{float(value):.17g}"


def format_optional(value) -> str:
    """Format an optional real, empty string for None"""
    if value is None:
        return ""
    return format_float(value)


def as_index_array(indices: Iterable[int]) -> np.ndarray:
    """Sorted unique int64 index array"""
    if isinstance(indices, (set, frozenset)):
        indices = sorted(indices)
    return np.unique(np.asarray(indices, dtype=np.int64).ravel())

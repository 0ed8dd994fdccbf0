"""Shared helpers: angle arithmetic, error base class, response envelopes, caching and worker pools"""
import math
import threading
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from contextlib import contextmanager
from datetime import datetime
from typing import Any, Callable, Dict, Hashable, Iterable, Iterator, List, Optional, TypeVar

import numpy as np

TWO_PI = 2.0 * math.pi

T = TypeVar("T")
R = TypeVar("R")


class DoaError(Exception):
    """Base exception for all estimator errors

    Every subclass carries a machine-readable ``error_type`` and a ``details``
    dict so callers (CLI, HTTP API) can report failures uniformly.
    """

    default_error_type = "doa_error"

    def __init__(self, message: str, error_type: Optional[str] = None,
                 details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.error_type = error_type or self.default_error_type
        self.details = details or {}


def wrap_angle(angle):
    """Wrap an angle (scalar or array) to [0, 2π)"""
    if np.ndim(angle) == 0:
        wrapped = float(angle) % TWO_PI
        # x % 2π can round up to exactly 2π for tiny negative x
        return 0.0 if wrapped >= TWO_PI else wrapped
    wrapped = np.mod(np.asarray(angle, dtype=float), TWO_PI)
    wrapped[wrapped >= TWO_PI] = 0.0
    return wrapped


def signed_difference(a, b):
    """Smallest signed angular difference a - b, in [-π, π)"""
    diff = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float) + math.pi, TWO_PI) - math.pi
    if np.ndim(diff) == 0:
        return float(diff)
    return diff


def wrapped_difference(a, b):
    """Magnitude of the smallest angle between a and b, in [0, π]"""
    diff = np.abs(signed_difference(a, b))
    if np.ndim(diff) == 0:
        return float(diff)
    return diff


def create_response(success: bool, data: Any = None, error: str = None,
                    status_code: int = 200) -> Dict[str, Any]:
    """Create standardized JSON response format for the HTTP API"""
    response = {
        "success": success,
        "timestamp": datetime.now().isoformat(),
        "status_code": status_code
    }

    if success and data is not None:
        response["data"] = data
    elif not success and error:
        response["error"] = {
            "message": error,
            "type": "error"
        }

    return response


def create_error_response(error: str, error_type: str = "error",
                          status_code: int = 500,
                          details: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Create standardized error response"""
    response = {
        "success": False,
        "timestamp": datetime.now().isoformat(),
        "status_code": status_code,
        "error": {
            "message": error,
            "type": error_type
        }
    }
    if details:
        response["error"]["details"] = details
    return response


class KernelCache:
    """Thread-safe in-memory cache for immutable precomputed arrays

    Entries never expire: the values are pure functions of their keys.
    """

    def __init__(self, max_entries: int = 64):
        self._cache: Dict[Hashable, Any] = {}
        self._lock = threading.Lock()
        self.max_entries = max_entries
        self._stats = {"hits": 0, "misses": 0}

    def get_or_compute(self, key: Hashable, factory: Callable[[], Any]) -> Any:
        """Return the cached value for key, computing it once if missing"""
        with self._lock:
            if key in self._cache:
                self._stats["hits"] += 1
                return self._cache[key]
            self._stats["misses"] += 1

        value = factory()

        with self._lock:
            if key not in self._cache:
                if len(self._cache) >= self.max_entries:
                    # drop the oldest insertion
                    self._cache.pop(next(iter(self._cache)))
                self._cache[key] = value
            return self._cache[key]

    def clear(self):
        """Clear all cached items"""
        with self._lock:
            self._cache.clear()

    def get_stats(self) -> Dict[str, int]:
        """Get cache statistics"""
        with self._lock:
            return {**self._stats, "entries": len(self._cache)}

    def __len__(self) -> int:
        with self._lock:
            return len(self._cache)


def run_ordered(func: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """Map func over items with a thread pool, returning results in input order

    With ``workers <= 1`` everything runs inline in the calling thread.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(func, items))


@contextmanager
def process_pool(workers: int) -> Iterator[Optional[Executor]]:
    """A ProcessPoolExecutor of ``workers`` processes, or None for inline work"""
    if workers <= 1:
        yield None
        return
    with ProcessPoolExecutor(max_workers=workers) as executor:
        yield executor


def map_ordered(func: Callable[[T], R], items: Iterable[T], executor: Optional[Executor] = None,
                chunksize: int = 1) -> List[R]:
    """Map func over items on an existing executor, results in input order

    ``func`` and the items must be picklable when the executor runs processes.
    """
    items = list(items)
    if executor is None:
        return [func(item) for item in items]
    return list(executor.map(func, items, chunksize=chunksize))

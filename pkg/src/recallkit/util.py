"""Small runtime helpers: thread resolution and order-preserving parallel map."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

from .errors import ValidationError

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "RECALL_THREADS"


def resolve_threads(requested: int | None = None) -> int:
    """Thread count from the explicit request, RECALL_THREADS, or logical cores."""
    if requested is None:
        env = os.environ.get(THREADS_ENV)
        if env is not None:
            try:
                requested = int(env)
            except ValueError as exc:
                raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    if requested is None:
        return os.cpu_count() or 1
    if requested < 1:
        raise ValidationError(f"thread count must be >= 1, got {requested}")
    return requested


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Apply ``fn`` to every item, results in input order regardless of scheduling."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    results: list[R] = [None] * len(items)  # type: ignore[list-item]

    def run(idx: int) -> None:
        results[idx] = fn(items[idx])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(run, range(len(items))))
    return results

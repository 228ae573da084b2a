"""Order-preserving process pool used by multi-start, bootstrap and simulation."""
from __future__ import annotations

import logging
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")

logger = logging.getLogger(__name__)


def _default_start_method() -> str:
    methods = multiprocessing.get_all_start_methods()
    if os.name == "posix" and "fork" in methods:
        return "fork"
    if "spawn" in methods:
        return "spawn"
    return methods[0]


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return workers


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """``[fn(item) for item in items]``, possibly on a process pool.

    Results come back in input order whatever the worker count, so callers
    that derive randomness from the item alone get scheduling-independent
    output. ``fn`` must be picklable (module-level function or partial).
    """
    items = list(items)
    workers = min(resolve_workers(workers), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    chunksize = max(1, len(items) // (4 * workers))
    ctx = multiprocessing.get_context(_default_start_method())
    logger.debug("dispatching %d tasks to %d workers (chunksize %d)", len(items), workers, chunksize)
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as executor:
        return list(executor.map(fn, items, chunksize=chunksize))

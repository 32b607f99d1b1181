"""Order-preserving map over independent tasks, optionally in worker processes."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable


def resolve_jobs(n_jobs: int | None) -> int:
    if n_jobs is None or n_jobs == 0:
        return 1
    if n_jobs < 0:
        try:
            return max(len(os.sched_getaffinity(0)), 1)
        except AttributeError:
            return max(os.cpu_count() or 1, 1)
    return n_jobs


def pmap(fn: Callable, items: Iterable, n_jobs: int | None = 1, chunksize: int = 8) -> list:
    items = list(items)
    jobs = resolve_jobs(n_jobs)
    if jobs == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))

"""
Replica execution over a process pool with results kept in replica order
"""
import logging
import multiprocessing
from typing import Callable, List, Optional, Sequence, TypeVar

from config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")


def resolve_workers(workers: Optional[int]) -> int:
    workers = settings.workers if workers is None else workers
    return max(1, int(workers))


def run_replicas(task: Callable[[int], T], indices: Sequence[int], workers: Optional[int] = None) -> List[T]:
    """
    Run task(index) for every index and return results in index order.

    The task must be picklable (a module-level function or a
    functools.partial of one) when more than one worker is used.
    """
    workers = min(resolve_workers(workers), max(1, len(indices)))
    indices = list(indices)
    if workers == 1:
        return [task(i) for i in indices]

    logger.info(f"Running {len(indices)} replicas on {workers} workers")
    with multiprocessing.Pool(processes=workers) as pool:
        return pool.map(task, indices, chunksize=1)


def split_budget(total: int, chunks: int) -> List[int]:
    """Split a sample budget into near-equal chunk sizes"""
    chunks = max(1, min(chunks, total))
    base, extra = divmod(total, chunks)
    return [base + (1 if i < extra else 0) for i in range(chunks)]

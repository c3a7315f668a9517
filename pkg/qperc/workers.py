from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List

from qperc.logger import init_logger
logger = init_logger(name="Workers", component="qperc")


def parallel_map(fn: Callable, items: Iterable, jobs: int = 1) -> List:
    """
    Map `fn` over `items`, optionally across worker processes.

    Results come back in input order, so any reduction over them is identical
    whatever `jobs` is. `fn` and the items must be picklable when jobs > 1.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    workers = min(jobs, len(items))
    logger.debug(f"Dispatching {len(items)} tasks to {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))

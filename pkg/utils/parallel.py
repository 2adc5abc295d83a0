"""
utils/parallel.py
-----------------
Ordered thread-pool map. Results come back in input order whatever the
worker count, so seeded runs do not depend on scheduling.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
U = TypeVar("U")


def map_ordered(fn: Callable[[T], U], items: Iterable[T], threads: int = 1) -> List[U]:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))

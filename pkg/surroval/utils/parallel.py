"""
Thread budget and order-preserving parallel map.

Likelihood and bootstrap work is split per trial / per replicate; results
always come back in input order so reductions are independent of the
number of threads.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor

from ..config import get_config

logger = logging.getLogger(__name__)

_THREAD_OVERRIDE: int | None = None


def set_threads(n: int | None):
    """Cap the number of worker threads (None falls back to SURROVAL_THREADS)."""
    global _THREAD_OVERRIDE
    _THREAD_OVERRIDE = n


def thread_count() -> int:
    if _THREAD_OVERRIDE is not None:
        return max(1, int(_THREAD_OVERRIDE))
    raw = get_config("SURROVAL_THREADS", "1")
    try:
        return max(1, int(raw))
    except (TypeError, ValueError):
        logger.warning("Ignoring non-integer SURROVAL_THREADS=%r", raw)
        return 1


def map_ordered(fn, items, threads: int | None = None) -> list:
    """Apply fn to every item, possibly in parallel, returning results in input order."""
    items = list(items)
    n = threads if threads is not None else thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def ordered_sum(values) -> float:
    # exactly rounded, so the result does not depend on how terms were produced
    return math.fsum(values)
